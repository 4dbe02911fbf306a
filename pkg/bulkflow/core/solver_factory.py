"""
线性求解器工厂，根据配置选择直接法或迭代法
"""

from typing import Optional

from bulkflow.core.linear_solvers import DirectSolver, IterativeSolver
from utils import logger
from utils.config import config

SOLVERS = {
    'direct': DirectSolver,
    'iterative': IterativeSolver,
}


def get_linear_solver(name: Optional[str] = None):
    """
    根据名称或配置返回线性求解器实例

    Args:
        name: 'direct' 或 'iterative'，为空时读取配置中的 linear_solver

    Returns:
        DirectSolver或IterativeSolver的实例
    """
    solver_name = (name or config.LINEAR_SOLVER).strip().lower()
    solver_class = SOLVERS.get(solver_name)
    if solver_class is None:
        logger.warning(f"未知的线性求解器 '{solver_name}'，默认使用直接法")
        return DirectSolver()
    logger.debug(f"使用{solver_name}线性求解器")
    return solver_class()
