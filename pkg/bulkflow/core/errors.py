"""
bulkflow 的错误族定义。

每个错误族带有一个 exit_code，命令行入口据此返回非零退出码。
"""

from typing import Any, List, Optional


class BulkFlowError(Exception):
    """所有 bulkflow 错误的基类"""

    exit_code = 1


# ---------------------------------------------------------------- 配置
class ConfigError(BulkFlowError):
    exit_code = 2


class ParseError(ConfigError):
    """Run document could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None, key: Optional[str] = None):
        context = []
        if line is not None:
            context.append(f"line {line}")
        if key is not None:
            context.append(f"key '{key}'")
        suffix = f" ({', '.join(context)})" if context else ""
        super().__init__(f"{message}{suffix}")
        self.line = line
        self.key = key


class ValidationError(ConfigError):
    """A run setting violates a declared rule."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


# ---------------------------------------------------------------- 几何
class GeometryError(BulkFlowError):
    exit_code = 3


class DegenerateGradient(GeometryError):
    pass


class DegenerateTriad(GeometryError):
    pass


class NonpositiveViscosity(GeometryError):
    pass


# ---------------------------------------------------------------- 网格
class MeshError(BulkFlowError):
    exit_code = 4


class InvalidDivisions(MeshError):
    pass


class InvertedElement(MeshError):
    pass


class SingularJacobian(MeshError):
    pass


class InconsistentOrientation(MeshError):
    pass


class UntaggedFace(MeshError):
    pass


class PointLocationError(MeshError):
    pass


# ---------------------------------------------------------------- 组装
class AssemblyError(BulkFlowError):
    exit_code = 5


class MissingStabilization(AssemblyError):
    pass


class NoPressureConstraint(AssemblyError):
    pass


class MissingSecondDerivatives(AssemblyError):
    pass


class ConflictingPrescriptions(AssemblyError):
    pass


class RedundantConstraint(AssemblyError):
    pass


# ---------------------------------------------------------------- 线性求解
class SolverError(BulkFlowError):
    exit_code = 6


class SingularSystem(SolverError):
    pass


class LinearSolveFailure(SolverError):
    pass


# ---------------------------------------------------------------- 非线性迭代
class ConvergenceError(BulkFlowError):
    exit_code = 7


class NonConvergence(ConvergenceError):
    """Picard reached its iteration cap; carries the last iterate."""

    def __init__(self, message: str, state: Any = None, history: Optional[List[float]] = None):
        super().__init__(message)
        self.state = state
        self.history = list(history or [])


class PicardDivergence(ConvergenceError):
    """Picard sub-iterations of a time step failed to converge."""

    def __init__(self, message: str, time: float = 0.0, history: Optional[List[float]] = None):
        super().__init__(message)
        self.time = time
        self.history = list(history or [])


# ---------------------------------------------------------------- 验证
class VerificationError(BulkFlowError):
    exit_code = 8


class InsufficientData(VerificationError):
    pass


class ProbeOffSurface(VerificationError):
    pass


# ---------------------------------------------------------------- 输出
class IoError(BulkFlowError):
    exit_code = 9
