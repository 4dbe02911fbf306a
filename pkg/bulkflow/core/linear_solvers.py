"""
Sparse linear solvers for the saddle systems.

Both solvers share one contract: the returned solution satisfies
``||M z - b|| <= RESIDUAL_TOL * ||b||`` or an error is raised.
"""

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from bulkflow.core.errors import LinearSolveFailure, SingularSystem
from utils import logger

RESIDUAL_TOL = 1e-10


def relative_residual(M, b: np.ndarray, z: np.ndarray) -> float:
    norm_b = np.linalg.norm(b)
    r = np.linalg.norm(M @ z - b)
    return float(r / norm_b) if norm_b > 0 else float(r)


class DirectSolver:
    """Sparse LU factorization (SuperLU)."""

    name = "direct"

    def solve(self, M, b: np.ndarray) -> np.ndarray:
        M = sparse.csc_matrix(M)
        if M.shape[0] != M.shape[1] or M.shape[0] != len(b):
            raise LinearSolveFailure(f"system of shape {M.shape} does not match rhs of length {len(b)}")
        try:
            lu = spla.splu(M)
        except RuntimeError as e:
            raise SingularSystem(f"sparse LU failed: {e}") from e
        z = lu.solve(b)
        if not np.all(np.isfinite(z)):
            raise SingularSystem("sparse LU produced non-finite values")
        # one step of iterative refinement
        z = z + lu.solve(b - M @ z)
        residual = relative_residual(M, b, z)
        if residual > RESIDUAL_TOL:
            raise LinearSolveFailure(f"direct solve residual {residual:.3e} exceeds {RESIDUAL_TOL:.0e}")
        return z


class IterativeSolver:
    """Restarted GMRES preconditioned by an incomplete LU factorization."""

    name = "iterative"

    def __init__(self, restart: int = 200, max_iter: int = 2000, drop_tol: float = 1e-5, fill_factor: float = 20.0):
        self.restart = restart
        self.max_iter = max_iter
        self.drop_tol = drop_tol
        self.fill_factor = fill_factor

    def solve(self, M, b: np.ndarray) -> np.ndarray:
        M = sparse.csc_matrix(M)
        try:
            ilu = spla.spilu(M, drop_tol=self.drop_tol, fill_factor=self.fill_factor)
        except RuntimeError as e:
            raise SingularSystem(f"incomplete LU failed: {e}") from e
        preconditioner = spla.LinearOperator(M.shape, ilu.solve)
        z, info = spla.gmres(M, b, M=preconditioner, rtol=0.1 * RESIDUAL_TOL, atol=0.0,
                             restart=self.restart, maxiter=self.max_iter)
        residual = relative_residual(M, b, z)
        logger.debug(f"GMRES 结束: info={info}, 相对残差 {residual:.3e}")
        if info < 0:
            raise SingularSystem(f"GMRES breakdown (info={info})")
        if residual > RESIDUAL_TOL:
            raise LinearSolveFailure(f"GMRES residual {residual:.3e} exceeds {RESIDUAL_TOL:.0e} (info={info})")
        return z
