# 确保utils包可导入
from utils import logger
from utils import config
