# 核心数值模块: 几何、有限元、组装、求解与验证
