import os
import sys

import pytest

# 确保能够导入项目模块
ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)


@pytest.fixture(autouse=True)
def _quiet_output(monkeypatch, tmp_path):
    # 测试输出写入临时目录
    monkeypatch.chdir(tmp_path)
