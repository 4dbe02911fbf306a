"""
Level-set field and the pointwise geometry derived from it.

All evaluation routines accept a single point of shape ``(3,)`` or a batch of
points with arbitrary leading dimensions ``(..., 3)`` and return arrays with
the same leading dimensions.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Tuple

import numpy as np

from bulkflow.core.errors import DegenerateGradient, DegenerateTriad, GeometryError

# Relative floor on |grad phi|; scaled by (phi_max - phi_min) / diameter.
GRADIENT_FLOOR = 1e-10
TRIAD_FLOOR = 1e-10

ScalarFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LevelSetField:
    """Scalar field phi whose level sets carry the surface flows.

    Attributes:
        kind: ``"analytic"`` or ``"nodal"``.
        phi_min: Lower bound of the level-set values covered by the bulk domain.
        phi_max: Upper bound of the level-set values.
        value_fn: Analytic phi(x).
        gradient_fn: Analytic grad phi(x), shape ``(..., 3)``.
        hessian_fn: Analytic Hess phi(x), shape ``(..., 3, 3)``.
        nodal_values: Values at the geometry nodes of ``mesh`` for nodal fields.
        mesh: Mesh the nodal values live on.
        diameter: Bulk-domain diameter, used to scale the gradient floor.
        curvature_gradient_fn: Optional closed-form gradient of the mean
            curvature, shape ``(..., 3)``.
    """

    kind: str
    phi_min: float
    phi_max: float
    value_fn: Optional[ScalarFn] = None
    gradient_fn: Optional[ScalarFn] = None
    hessian_fn: Optional[ScalarFn] = None
    nodal_values: Optional[np.ndarray] = None
    mesh: object = field(default=None, repr=False, compare=False)
    diameter: float = 1.0
    curvature_gradient_fn: Optional[ScalarFn] = None

    def __post_init__(self):
        if self.kind not in ("analytic", "nodal"):
            raise GeometryError(f"unknown level-set kind '{self.kind}'")
        if not self.phi_min < self.phi_max:
            raise GeometryError(f"phi_min={self.phi_min} must be below phi_max={self.phi_max}")
        if self.kind == "analytic" and (self.gradient_fn is None or self.hessian_fn is None):
            raise GeometryError("analytic level sets need gradient and Hessian callables")
        if self.kind == "nodal" and (self.nodal_values is None or self.mesh is None):
            raise GeometryError("nodal level sets need nodal values and their mesh")

    @classmethod
    def analytic(
        cls,
        value: ScalarFn,
        gradient: ScalarFn,
        hessian: ScalarFn,
        phi_min: float,
        phi_max: float,
        diameter: float = 1.0,
        curvature_gradient: Optional[ScalarFn] = None,
    ) -> "LevelSetField":
        return cls("analytic", float(phi_min), float(phi_max), value, gradient, hessian, diameter=diameter,
                   curvature_gradient_fn=curvature_gradient)

    @classmethod
    def from_nodal(cls, mesh, nodal_values: np.ndarray, phi_min: Optional[float] = None,
                   phi_max: Optional[float] = None) -> "LevelSetField":
        values = np.asarray(nodal_values, dtype=float)
        lo = float(values.min()) if phi_min is None else float(phi_min)
        hi = float(values.max()) if phi_max is None else float(phi_max)
        extent = np.ptp(mesh.nodes, axis=0)
        return cls("nodal", lo, hi, nodal_values=values, mesh=mesh, diameter=float(np.linalg.norm(extent)))

    @property
    def is_analytic(self) -> bool:
        return self.kind == "analytic"

    @property
    def gradient_floor(self) -> float:
        return GRADIENT_FLOOR * (self.phi_max - self.phi_min) / max(self.diameter, 1e-300)

    def evaluate(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(phi, grad phi, Hess phi)`` at physical points ``x``."""
        x = np.asarray(x, dtype=float)
        if self.is_analytic:
            value = self.value_fn(x) if self.value_fn is not None else np.full(x.shape[:-1], np.nan)
            return (np.asarray(value, dtype=float),
                    np.asarray(self.gradient_fn(x), dtype=float),
                    np.asarray(self.hessian_fn(x), dtype=float))
        # nodal fields go through the FE interpolant on their mesh
        from bulkflow.core.mesh_fe import interpolate_nodal_field, locate_points

        flat = x.reshape(-1, 3)
        elements, refs = locate_points(self.mesh, flat)
        value, grad, hess = interpolate_nodal_field(self.mesh, self.nodal_values, elements, refs)
        lead = x.shape[:-1]
        return value.reshape(lead), grad.reshape(lead + (3,)), hess.reshape(lead + (3, 3))


@dataclass(frozen=True)
class GeometryFrame:
    """Per-point geometric bundle; every field carries the same leading shape."""

    n: np.ndarray
    P: np.ndarray
    grad_norm: np.ndarray
    H: np.ndarray
    normal_gradient: np.ndarray
    mean_curvature: np.ndarray
    principal_curvatures: np.ndarray
    gauss_curvature: np.ndarray
    m: Optional[np.ndarray] = None
    t: Optional[np.ndarray] = None
    q: Optional[np.ndarray] = None

    @property
    def has_boundary(self) -> bool:
        return self.m is not None

    def projector_gradient(self) -> np.ndarray:
        """Derivatives of P, ``dP[..., a, b, k] = d P_ab / d x_k``."""
        N, n = self.normal_gradient, self.n
        return -(np.einsum("...ak,...b->...abk", N, n) + np.einsum("...a,...bk->...abk", n, N))

    def coarea_weight(self) -> np.ndarray:
        return self.grad_norm

    def boundary_weight(self) -> np.ndarray:
        """Co-area boundary weight (q . m) |grad phi|."""
        if not self.has_boundary:
            raise DegenerateTriad("frame carries no boundary triad")
        return np.einsum("...i,...i->...", self.q, self.m) * self.grad_norm

    def invariant_defects(self) -> dict:
        """Largest violation of each frame identity, for property checks."""
        P, n, H = self.P, self.n, self.H
        defects = {
            "unit_normal": np.max(np.abs(np.linalg.norm(n, axis=-1) - 1.0)),
            "symmetric": np.max(np.abs(P - np.swapaxes(P, -1, -2))),
            "idempotent": np.max(np.abs(P @ P - P)),
            "annihilates_n": np.max(np.abs(np.einsum("...ij,...j->...i", P, n))),
            "in_plane_H": np.max(np.linalg.norm(H - P @ H @ P, axis=(-2, -1))
                                 / (1.0 + np.linalg.norm(H, axis=(-2, -1)))),
        }
        if self.has_boundary:
            defects["unit_t"] = np.max(np.abs(np.linalg.norm(self.t, axis=-1) - 1.0))
            defects["unit_q"] = np.max(np.abs(np.linalg.norm(self.q, axis=-1) - 1.0))
            defects["q_dot_n"] = np.max(np.abs(np.einsum("...i,...i->...", self.q, n)))
            defects["t_dot_n"] = np.max(np.abs(np.einsum("...i,...i->...", self.t, n)))
        return {k: float(v) for k, v in defects.items()}


def _tangent_basis(n: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # helper axis least aligned with n
    axis = np.argmin(np.abs(n), axis=-1)
    helper = np.eye(3)[axis]
    t1 = helper - np.einsum("...i,...i->...", helper, n)[..., None] * n
    t1 /= np.linalg.norm(t1, axis=-1, keepdims=True)
    return t1, np.cross(n, t1)


def principal_curvatures(n: np.ndarray, H: np.ndarray) -> np.ndarray:
    """Return ``(kappa_1, kappa_2) = -eig(H)`` restricted to the tangent plane.

    The eigenvalue of H along n is deflated by working in an orthonormal
    tangent basis, which leaves a symmetric 2x2 problem with closed-form roots.
    """
    t1, t2 = _tangent_basis(n)
    a = np.einsum("...i,...ij,...j->...", t1, H, t1)
    b = np.einsum("...i,...ij,...j->...", t1, H, t2)
    d = np.einsum("...i,...ij,...j->...", t2, H, t2)
    mean = 0.5 * (a + d)
    radius = np.hypot(0.5 * (a - d), b)
    return np.stack([-(mean - radius), -(mean + radius)], axis=-1)


def frames_from_derivatives(grad: np.ndarray, hess: np.ndarray, floor: float = GRADIENT_FLOOR) -> GeometryFrame:
    """Build frames from classical first and second derivatives of phi."""
    grad = np.asarray(grad, dtype=float)
    hess = np.asarray(hess, dtype=float)
    norm = np.linalg.norm(grad, axis=-1)
    if not np.all(norm > floor):
        worst = float(np.min(norm))
        raise DegenerateGradient(f"|grad phi| = {worst:.3e} below floor {floor:.3e}")

    n = grad / norm[..., None]
    P = np.eye(3) - n[..., :, None] * n[..., None, :]
    N = (P @ hess) / norm[..., None, None]
    H = N @ P
    H = 0.5 * (H + np.swapaxes(H, -1, -2))
    kappa = np.trace(H, axis1=-2, axis2=-1)
    principal = principal_curvatures(n, H)
    return GeometryFrame(
        n=n,
        P=P,
        grad_norm=norm,
        H=H,
        normal_gradient=N,
        mean_curvature=kappa,
        principal_curvatures=principal,
        gauss_curvature=principal[..., 0] * principal[..., 1],
    )


def evaluate_frame(field: LevelSetField, x: np.ndarray) -> GeometryFrame:
    """Evaluate the geometry frame of ``field`` at physical point(s) ``x``."""
    _, grad, hess = field.evaluate(x)
    return frames_from_derivatives(grad, hess, field.gradient_floor)


def boundary_frame(frame: GeometryFrame, m: np.ndarray) -> GeometryFrame:
    """Attach the boundary triad (m, t, q) to ``frame``.

    Args:
        frame: Frame at boundary points.
        m: Outward unit normal of the bulk boundary at the same points.

    Returns:
        A copy of ``frame`` with ``t = m x n`` (normalized) and ``q = n x t``.

    Raises:
        DegenerateTriad: When the level set is tangent to the boundary.
    """
    m = np.broadcast_to(np.asarray(m, dtype=float), frame.n.shape)
    t = np.cross(m, frame.n)
    length = np.linalg.norm(t, axis=-1)
    if not np.all(length > TRIAD_FLOOR):
        raise DegenerateTriad(f"|m x n| = {float(np.min(length)):.3e}: level set tangent to the boundary")
    t = t / length[..., None]
    q = np.cross(frame.n, t)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    return replace(frame, m=np.array(m), t=t, q=q)
