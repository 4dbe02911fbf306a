"""
Tangential differential calculus kernels.

The kernels map classical derivatives at quadrature points to surface
operators. Every function broadcasts over leading dimensions, so the same
code serves a single point and a batch of ``(elements, points, basis)``.

Conventions: a vector gradient ``G[..., i, j] = d v_i / d x_j`` (row i is the
gradient of component i); second derivatives ``S[..., i, j, k] = d^2 v_i /
d x_j d x_k``; projector derivatives ``dP[..., a, b, k] = d P_ab / d x_k``.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from bulkflow.core.errors import GeometryError, NonpositiveViscosity
from bulkflow.core.levelset_geometry import GeometryFrame


@dataclass(frozen=True)
class PointGradients:
    """Classical derivatives of a scalar and/or a vector field at points."""

    scalar_grad: Optional[np.ndarray] = None
    vector_grad: Optional[np.ndarray] = None
    second_derivs: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("scalar_grad", "vector_grad", "second_derivs"):
            value = getattr(self, name)
            if value is not None and not np.all(np.isfinite(value)):
                raise GeometryError(f"{name} has non-finite entries")
        if self.second_derivs is not None:
            s = np.asarray(self.second_derivs)
            scale = 1.0 + np.max(np.abs(s))
            if np.max(np.abs(s - np.swapaxes(s, -1, -2))) > 1e-12 * scale:
                raise GeometryError("second derivatives are not symmetric in their last two indices")


@dataclass(frozen=True)
class SurfaceStress:
    """Boussinesq-Scriven surface stress ``-p P + 2 mu eps_cov``."""

    sigma: np.ndarray

    def in_plane_defect(self, P: np.ndarray) -> float:
        return float(np.max(np.abs(self.sigma - P @ self.sigma @ P)))


def _transpose(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def surface_gradients(g: PointGradients, P: np.ndarray) -> Tuple[Optional[np.ndarray], Optional[np.ndarray], Optional[np.ndarray]]:
    """Return ``(dirGrad, covGrad, scalarSurfGrad)``; entries are None when the input is missing."""
    dir_grad = cov_grad = surf_grad = None
    if g.vector_grad is not None:
        dir_grad = g.vector_grad @ P
        cov_grad = P @ dir_grad
    if g.scalar_grad is not None:
        surf_grad = np.einsum("...ij,...j->...i", P, g.scalar_grad)
    return dir_grad, cov_grad, surf_grad


def surface_divergence_vector(g: PointGradients, P: np.ndarray) -> np.ndarray:
    """tr(grad v . P)."""
    return np.einsum("...ij,...ji->...", g.vector_grad, P)


def surface_divergence_tensor(row_grads: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Row-wise surface divergence of a tensor field.

    Args:
        row_grads: ``T'[..., i, l, k] = d T_il / d x_k``, i.e. row i of the
            tensor has the vector gradient ``T'[..., i, :, :]``.
        P: Projector.

    Returns:
        Vector whose component i is ``tr(grad(T_i.) P)``.
    """
    return np.einsum("...ilk,...kl->...i", row_grads, P)


def strain_and_stress(g: PointGradients, p, mu: float, P: np.ndarray) -> Tuple[np.ndarray, np.ndarray, SurfaceStress]:
    if mu <= 0:
        raise NonpositiveViscosity(f"mu = {mu} must be positive")
    dir_grad = g.vector_grad @ P
    eps_dir = 0.5 * (dir_grad + _transpose(dir_grad))
    eps_cov = P @ eps_dir @ P
    sigma = -np.asarray(p, dtype=float)[..., None, None] * P + 2.0 * mu * eps_cov
    return eps_dir, eps_cov, SurfaceStress(sigma)


def vorticity_scalar(g: PointGradients, frame: GeometryFrame) -> np.ndarray:
    """Signed surface vorticity ``(curl_dir u_t) . n``.

    The curl is the classical one built from the columns of the directional
    surface gradient ``A = grad u . P``.
    """
    A = g.vector_grad @ frame.P
    curl = np.stack(
        [A[..., 2, 1] - A[..., 1, 2], A[..., 0, 2] - A[..., 2, 0], A[..., 1, 0] - A[..., 0, 1]],
        axis=-1,
    )
    return np.einsum("...i,...i->...", curl, frame.n)


def covariant_strain_gradient(grad_u: np.ndarray, hess_u: np.ndarray, P: np.ndarray,
                              dP: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``eps_cov(u)`` and its classical derivatives ``dE[..., a, d, k]``."""
    A = grad_u @ P
    dA = np.einsum("...jrk,...rm->...jmk", hess_u, P) + np.einsum("...jr,...rmk->...jmk", grad_u, dP)
    S = 0.5 * (A + _transpose(A))
    dS = 0.5 * (dA + np.swapaxes(dA, -3, -2))
    E = P @ S @ P
    dE = (np.einsum("...abk,...bc,...cd->...adk", dP, S, P)
          + np.einsum("...ab,...bck,...cd->...adk", P, dS, P)
          + np.einsum("...ab,...bc,...cdk->...adk", P, S, dP))
    return E, dE


def viscous_divergence(grad_u: np.ndarray, hess_u: np.ndarray, P: np.ndarray, dP: np.ndarray) -> np.ndarray:
    """``P . div_G(2 eps_cov(u))``, the viscous operator without the factor mu."""
    _, dE = covariant_strain_gradient(grad_u, hess_u, P, dP)
    div = surface_divergence_tensor(2.0 * dE, P)
    return np.einsum("...ij,...j->...i", P, div)


def stress_divergence(g: PointGradients, p, grad_p: np.ndarray, mu: float, frame: GeometryFrame) -> np.ndarray:
    """``P . div_G sigma(u, p)`` from classical derivatives of u and p.

    Requires ``g.second_derivs``. The pressure part reduces to ``-grad_G p``
    because ``P . div_G P`` vanishes.
    """
    if mu <= 0:
        raise NonpositiveViscosity(f"mu = {mu} must be positive")
    P = frame.P
    dP = frame.projector_gradient()
    viscous = viscous_divergence(g.vector_grad, g.second_derivs, P, dP)
    p = np.asarray(p, dtype=float)
    d_sigma_p = -(np.einsum("...k,...il->...ilk", grad_p, P) + p[..., None, None, None] * dP)
    pressure = np.einsum("...ij,...j->...i", P, surface_divergence_tensor(d_sigma_p, P))
    return mu * viscous + pressure
