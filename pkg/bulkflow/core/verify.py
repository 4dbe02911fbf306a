"""
Error norms, residual measures and per-surface diagnostics.

Bulk integrals are co-area weighted (``|grad phi|``), so each of them is the
integral over all level sets at once. Reductions go through ``math.fsum`` so
results do not depend on chunking or thread count.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from bulkflow.core.errors import InsufficientData, ProbeOffSurface, VerificationError
from bulkflow.core.flow_assembly import (
    AssemblyOptions,
    FlowProblem,
    FlowSpaces,
    FlowState,
    QuadContext,
    quadrature_context,
    require_second_derivatives,
)
from bulkflow.core.levelset_geometry import LevelSetField, evaluate_frame
from bulkflow.core.mesh_fe import locate_points, quadrature
from bulkflow.core.tdc_ops import PointGradients, stress_divergence, surface_divergence_vector

PROBE_TOL = 1e-8


@dataclass(frozen=True)
class ExactSolution:
    """Closed-form velocity and pressure with the derivatives the error measures need."""

    velocity: Callable[[np.ndarray], np.ndarray]
    velocity_gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    pressure: Optional[Callable[[np.ndarray], np.ndarray]] = None


def _fsum(values: Iterable[np.ndarray]) -> float:
    return math.fsum(float(v) for arr in values for v in np.ravel(arr))


def _contexts(spaces: FlowSpaces, levelset: LevelSetField, hessians: bool = False,
              options: Optional[AssemblyOptions] = None):
    options = options or AssemblyOptions()
    ids = np.arange(spaces.mesh.n_elements)
    size = max(int(options.chunk_size), 1)
    for start in range(0, len(ids), size):
        yield quadrature_context(spaces, levelset, ids[start:start + size], hessians)


def _fields(ctx: QuadContext, spaces: FlowSpaces, state: FlowState, derivatives: int = 1):
    """Velocity, its gradient (and Hessian), pressure and pressure gradient at the quadrature points."""
    u_coeffs = state.velocity[:, spaces.velocity.dof_map[ctx.element_ids]]
    p_coeffs = state.pressure[spaces.pressure.dof_map[ctx.element_ids]]
    u = np.einsum("eqa,iea->eqi", ctx.vel.values, u_coeffs)
    grad_u = np.einsum("eqak,iea->eqik", ctx.vel.grads, u_coeffs)
    hess_u = np.einsum("eqakm,iea->eqikm", ctx.vel.hess, u_coeffs) if derivatives > 1 else None
    p = np.einsum("eqc,ec->eq", ctx.pre.values, p_coeffs)
    grad_p = np.einsum("eqck,ec->eqk", ctx.pre.grads, p_coeffs)
    return u, grad_u, hess_u, p, grad_p


def velocity_l2_error(state: FlowState, exact: ExactSolution, levelset: LevelSetField, spaces: FlowSpaces,
                      options: Optional[AssemblyOptions] = None) -> float:
    """Sum over components of ``sqrt(int (u_i - u_i^ex)^2 |grad phi|)``."""
    parts: List[List[np.ndarray]] = [[], [], []]
    for ctx in _contexts(spaces, levelset, options=options):
        u, _, _, _, _ = _fields(ctx, spaces, state)
        diff = u - np.asarray(exact.velocity(ctx.x), dtype=float)
        for i in range(3):
            parts[i].append(ctx.weights * diff[..., i] ** 2)
    return float(sum(math.sqrt(max(_fsum(p), 0.0)) for p in parts))


def pseudo_energy(grad_cov: np.ndarray, weights: np.ndarray, mu: float) -> np.ndarray:
    return 0.5 * mu * weights * np.einsum("...ij,...ij->...", grad_cov, grad_cov)


def energy_error(state: FlowState, exact: ExactSolution, levelset: LevelSetField, spaces: FlowSpaces, mu: float,
                 options: Optional[AssemblyOptions] = None) -> float:
    """``|e(u_h) - e(u_ex)|`` with ``e(u) = mu/2 int grad_cov u : grad_cov u |grad phi|``."""
    if exact.velocity_gradient is None:
        raise VerificationError("energy error needs the exact velocity gradient")
    discrete, reference = [], []
    for ctx in _contexts(spaces, levelset, options=options):
        P = ctx.frame.P
        _, grad_u, _, _, _ = _fields(ctx, spaces, state)
        grad_ex = np.asarray(exact.velocity_gradient(ctx.x), dtype=float)
        discrete.append(pseudo_energy(P @ grad_u @ P, ctx.weights, mu))
        reference.append(pseudo_energy(P @ grad_ex @ P, ctx.weights, mu))
    return abs(_fsum(discrete) - _fsum(reference))


def residual_errors(state: FlowState, problem: FlowProblem, levelset: LevelSetField, spaces: FlowSpaces,
                    options: Optional[AssemblyOptions] = None) -> Tuple[float, float]:
    """Element-interior L2 norms of the strong momentum and continuity residuals.

    Momentum: ``P div_G sigma(u, p) + P f - rho (u . grad_cov) u``; the advection
    term only enters nonlinear problems. Continuity: ``div_G (P u)``.

    Raises:
        MissingSecondDerivatives: The level set cannot supply second derivatives.
    """
    require_second_derivatives(levelset, spaces)
    momentum, continuity = [], []
    for ctx in _contexts(spaces, levelset, hessians=True, options=options):
        frame = ctx.frame
        u, grad_u, hess_u, p, grad_p = _fields(ctx, spaces, state, derivatives=2)
        hess_u = 0.5 * (hess_u + np.swapaxes(hess_u, -1, -2))
        g = PointGradients(vector_grad=grad_u, second_derivs=hess_u)
        r = stress_divergence(g, p, grad_p, problem.mu, frame)
        r = r + np.einsum("eqij,eqj->eqi", frame.P, problem.force_at(ctx.x, state.time))
        if problem.nonlinear:
            beta = np.einsum("eqij,eqj->eqi", frame.P, u)
            r = r - problem.rho * np.einsum("eqij,eqjk,eqk->eqi", frame.P, grad_u @ frame.P, beta)
        u_n = np.einsum("eqi,eqi->eq", u, frame.n)
        div_t = surface_divergence_vector(g, frame.P) - frame.mean_curvature * u_n
        momentum.append(ctx.weights * np.einsum("eqi,eqi->eq", r, r))
        continuity.append(ctx.weights * div_t ** 2)
    return math.sqrt(max(_fsum(momentum), 0.0)), math.sqrt(max(_fsum(continuity), 0.0))


def normal_velocity_error(state: FlowState, levelset: LevelSetField, spaces: FlowSpaces,
                          options: Optional[AssemblyOptions] = None) -> float:
    """``int (u . n)^2 |grad phi|``, the penalty's target quantity."""
    parts = []
    for ctx in _contexts(spaces, levelset, options=options):
        u, _, _, _, _ = _fields(ctx, spaces, state)
        parts.append(ctx.weights * np.einsum("eqi,eqi->eq", u, ctx.frame.n) ** 2)
    return _fsum(parts)


def velocity_mass_norm(state: FlowState, levelset: LevelSetField, spaces: FlowSpaces,
                       options: Optional[AssemblyOptions] = None) -> float:
    """``int |u|^2 |grad phi|``."""
    parts = []
    for ctx in _contexts(spaces, levelset, options=options):
        u, _, _, _, _ = _fields(ctx, spaces, state)
        parts.append(ctx.weights * np.einsum("eqi,eqi->eq", u, u))
    return _fsum(parts)


def weighted_pressure_mean(state: FlowState, levelset: LevelSetField, spaces: FlowSpaces,
                           options: Optional[AssemblyOptions] = None) -> float:
    parts = []
    for ctx in _contexts(spaces, levelset, options=options):
        _, _, _, p, _ = _fields(ctx, spaces, state)
        parts.append(ctx.weights * p)
    return _fsum(parts)


# ---------------------------------------------------------------------------
# reports and rates
# ---------------------------------------------------------------------------
RATE_METRICS = ("vel_l2", "energy", "resid_mom", "resid_cont")


@dataclass(frozen=True)
class ErrorReport:
    vel_l2: float
    energy: float
    resid_mom: float
    resid_cont: float
    normal_vel: float
    mesh_size: float
    dof_counts: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("vel_l2", "energy", "resid_mom", "resid_cont", "normal_vel", "mesh_size"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise VerificationError(f"{name} = {value} must be finite and nonnegative")

    def as_row(self) -> Dict[str, float]:
        row = asdict(self)
        counts = row.pop("dof_counts")
        row.update({f"dofs_{k}": v for k, v in counts.items()})
        return row


def error_report(state: FlowState, problem: FlowProblem, exact: Optional[ExactSolution], levelset: LevelSetField,
                 spaces: FlowSpaces, options: Optional[AssemblyOptions] = None) -> ErrorReport:
    """All error measures of one solve; exact-solution entries are zero without ``exact``."""
    vel = energy = 0.0
    if exact is not None:
        vel = velocity_l2_error(state, exact, levelset, spaces, options)
        if exact.velocity_gradient is not None:
            energy = energy_error(state, exact, levelset, spaces, problem.mu, options)
    mom, cont = residual_errors(state, problem, levelset, spaces, options)
    return ErrorReport(
        vel_l2=vel,
        energy=energy,
        resid_mom=mom,
        resid_cont=cont,
        normal_vel=normal_velocity_error(state, levelset, spaces, options),
        mesh_size=float(np.max(spaces.mesh.element_size)),
        dof_counts={"velocity": spaces.n_velocity, "pressure": spaces.n_pressure},
    )


def convergence_rates(reports: Sequence[ErrorReport], metrics: Sequence[str] = RATE_METRICS,
                      tail: int = 3) -> Dict[str, float]:
    """Least-squares slope of log(error) against log(h) over the last ``tail`` reports.

    Raises:
        InsufficientData: Fewer than three reports or mesh sizes not strictly decreasing.
    """
    if len(reports) < 3:
        raise InsufficientData(f"convergence rates need at least 3 reports, got {len(reports)}")
    h = np.array([r.mesh_size for r in reports])
    if np.any(np.diff(h) >= 0) or np.any(h <= 0):
        raise InsufficientData("mesh sizes must be positive and strictly decreasing")
    log_h = np.log(h[-tail:])
    rates = {}
    for name in metrics:
        errors = np.array([getattr(r, name) for r in reports[-tail:]])
        if np.any(errors <= 0):
            rates[name] = float("nan")
            continue
        rates[name] = float(np.polyfit(log_h, np.log(errors), 1)[0])
    return rates


# ---------------------------------------------------------------------------
# point evaluation and probes
# ---------------------------------------------------------------------------
def evaluate_state(spaces: FlowSpaces, state: FlowState, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """FE velocity ``(N, 3)`` and pressure ``(N,)`` at physical points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    elements, refs = locate_points(spaces.mesh, points)
    bv, _, _ = spaces.velocity.basis.tabulate(refs)
    bp, _, _ = spaces.pressure.basis.tabulate(refs)
    u = np.einsum("na,ina->ni", bv, state.velocity[:, spaces.velocity.dof_map[elements]])
    p = np.einsum("nc,nc->n", bp, state.pressure[spaces.pressure.dof_map[elements]])
    return u, p


@dataclass(frozen=True)
class SurfaceProbe:
    """Quadrature on one level set ``phi = c`` built from a closed-form parametrization.

    ``pressure_points`` names points on the same surface for pressure probes.
    """

    c: float
    points: np.ndarray
    weights: np.ndarray
    pressure_points: Dict[str, np.ndarray] = field(default_factory=dict)
    name: str = ""

    @classmethod
    def from_parametrization(cls, c: float, surface: Callable[[np.ndarray, np.ndarray], np.ndarray],
                             s_range: Tuple[float, float], t_range: Tuple[float, float], n: Tuple[int, int],
                             periodic: Tuple[bool, bool] = (False, False), name: str = "",
                             pressure_points: Optional[Dict[str, Sequence[float]]] = None) -> "SurfaceProbe":
        """Tensor rule: midpoint rule in periodic directions, Gauss-Legendre otherwise.

        ``surface(s, t)`` maps arrays of parameters to ``(..., 3)`` points; the
        area element comes from central differences of the map.
        """
        nodes = []
        for (lo, hi), count, closed in zip((s_range, t_range), n, periodic):
            if closed:
                x = lo + (hi - lo) * (np.arange(count) + 0.5) / count
                w = np.full(count, (hi - lo) / count)
            else:
                x, w = np.polynomial.legendre.leggauss(count)
                x = lo + 0.5 * (hi - lo) * (x + 1.0)
                w = 0.5 * (hi - lo) * w
            nodes.append((x, w))
        (s, ws), (t, wt) = nodes
        S, T = np.meshgrid(s, t, indexing="ij")
        W = np.outer(ws, wt)
        eps = 1e-6
        xs = (surface(S + eps, T) - surface(S - eps, T)) / (2 * eps)
        xt = (surface(S, T + eps) - surface(S, T - eps)) / (2 * eps)
        area = np.linalg.norm(np.cross(xs, xt), axis=-1)
        probe_points = {k: np.asarray(v, dtype=float) for k, v in (pressure_points or {}).items()}
        return cls(float(c), surface(S, T).reshape(-1, 3), (W * area).ravel(), probe_points, name)

    def check(self, levelset: LevelSetField) -> None:
        """Raise ProbeOffSurface unless every probe point lies on ``phi = c``."""
        points = [self.points] + [p.reshape(1, 3) for p in self.pressure_points.values()]
        phi, _, _ = levelset.evaluate(np.vstack(points))
        worst = float(np.max(np.abs(phi - self.c)))
        if worst > PROBE_TOL * max(1.0, abs(self.c)):
            raise ProbeOffSurface(f"probe '{self.name}' deviates from phi = {self.c} by {worst:.3e}")

    @property
    def area(self) -> float:
        return math.fsum(self.weights)


def surface_quantity(probe: SurfaceProbe, state: FlowState, spaces: FlowSpaces, levelset: LevelSetField,
                     kind: str, rho: float = 1.0, points: Sequence[str] = ()) -> float:
    """Evaluate a per-surface quantity.

    kinds:
        ``kinetic_energy``: ``int_Gamma_c rho/2 |P u|^2``.
        ``pressure_at``: pressure at ``probe.pressure_points[points[0]]``.
        ``pressure_diff``: ``p(points[0]) - p(points[1])``.

    Raises:
        ProbeOffSurface: A probe point is not on its level set.
    """
    probe.check(levelset)
    if kind == "kinetic_energy":
        u, _ = evaluate_state(spaces, state, probe.points)
        frame = evaluate_frame(levelset, probe.points)
        ut = np.einsum("nij,nj->ni", frame.P, u)
        return math.fsum(0.5 * rho * probe.weights * np.einsum("ni,ni->n", ut, ut))
    if kind in ("pressure_at", "pressure_diff"):
        needed = 1 if kind == "pressure_at" else 2
        if len(points) != needed:
            raise VerificationError(f"{kind} needs {needed} named probe point(s)")
        missing = [p for p in points if p not in probe.pressure_points]
        if missing:
            raise ProbeOffSurface(f"probe '{probe.name}' has no point '{missing[0]}'")
        _, p = evaluate_state(spaces, state, np.vstack([probe.pressure_points[k] for k in points]))
        return float(p[0]) if kind == "pressure_at" else float(p[0] - p[1])
    raise VerificationError(f"unknown surface quantity '{kind}'")


def shell_kinetic_energy(state: FlowState, spaces: FlowSpaces, levelset: LevelSetField, c: float, delta: float,
                         rho: float = 1.0, options: Optional[AssemblyOptions] = None) -> float:
    """Thin-shell co-area estimate of the kinetic energy on ``phi = c``.

    Bulk integral of ``rho/2 |P u|^2 |grad phi|`` over ``|phi - c| <= delta``
    divided by ``2 delta``.
    """
    if delta <= 0:
        raise VerificationError(f"shell half-width {delta} must be positive")
    parts = []
    for ctx in _contexts(spaces, levelset, options=options):
        phi = _phi_at(ctx, spaces, levelset)
        inside = np.abs(phi - c) <= delta
        u, _, _, _, _ = _fields(ctx, spaces, state)
        ut = np.einsum("eqij,eqj->eqi", ctx.frame.P, u)
        parts.append(np.where(inside, 0.5 * rho * ctx.weights * np.einsum("eqi,eqi->eq", ut, ut), 0.0))
    return _fsum(parts) / (2.0 * delta)


def _phi_at(ctx: QuadContext, spaces: FlowSpaces, levelset: LevelSetField) -> np.ndarray:
    mesh = spaces.mesh
    if levelset.is_analytic or levelset.mesh is None or levelset.mesh.n_nodes != mesh.n_nodes:
        phi, _, _ = levelset.evaluate(ctx.x)
        return phi
    values, _, _ = mesh.geometry_basis.tabulate(quadrature(spaces.quad_degree).points)
    return np.einsum("qn,en->eq", values, levelset.nodal_values[mesh.elements[ctx.element_ids]])


def line_profile(state: FlowState, spaces: FlowSpaces, start: Sequence[float], end: Sequence[float],
                 n: int = 101, mapping: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> Dict[str, np.ndarray]:
    """Sample velocity and pressure along a straight parameter-space line.

    ``mapping`` takes the parameter points to physical points (identity when
    None). Returns ``s`` in [0, 1], the physical ``points``, ``velocity`` and
    ``pressure``.
    """
    s = np.linspace(0.0, 1.0, n)
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    param = start[None, :] + s[:, None] * (end - start)[None, :]
    points = param if mapping is None else np.asarray(mapping(param), dtype=float)
    u, p = evaluate_state(spaces, state, points)
    return {"s": s, "points": points, "velocity": u, "pressure": p}


def profile_self_convergence(profiles: Sequence[np.ndarray]) -> Dict[str, float]:
    """Richardson self-convergence of one sampled profile on successively halved meshes.

    ``profiles`` holds the same line sampled at the same parameter values on
    each level, coarsest first. ``rel_change`` is the max-norm change between
    the two finest samples relative to the finest; ``observed_order`` is
    ``log2`` of the ratio of the last two successive changes (nan with only
    two levels or a vanishing change).

    Raises:
        InsufficientData: Fewer than two profiles or mismatched sample shapes.
    """
    if len(profiles) < 2:
        raise InsufficientData(f"self-convergence needs at least 2 profiles, got {len(profiles)}")
    samples = [np.asarray(p, dtype=float) for p in profiles]
    if any(s.shape != samples[0].shape for s in samples):
        raise InsufficientData("profiles must be sampled at the same points on every level")
    changes = [float(np.max(np.abs(b - a))) for a, b in zip(samples[:-1], samples[1:])]
    scale = float(np.max(np.abs(samples[-1])))
    rel_change = changes[-1] / scale if scale > 0 else math.nan
    order = math.nan
    if len(changes) >= 2 and changes[-1] > 0 and changes[-2] > 0:
        order = math.log2(changes[-2] / changes[-1])
    return {"rel_change": rel_change, "observed_order": order}
