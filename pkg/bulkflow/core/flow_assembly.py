"""
Assembly and solution of the co-area weighted surface flow equations.

Velocity unknowns are full 3-vectors stored component-major
(``index = component * n_nodes + dof``); momentum test functions enter through
their tangential part ``P w`` and the normal part is driven to zero by a
penalty. The global saddle system is

    [ K         -C^T ] [u]   [ f ]
    [ -(C + Pv)  -S  ] [p] = [-g ]

with ``K = D + A + G`` and the stabilization contributions ``Pv``, ``S``,
``g`` (zero without stabilization).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from bulkflow.core.errors import (
    AssemblyError,
    ConflictingPrescriptions,
    InvalidDivisions,
    LinearSolveFailure,
    MissingSecondDerivatives,
    MissingStabilization,
    NonConvergence,
    NoPressureConstraint,
    NonpositiveViscosity,
    PicardDivergence,
    RedundantConstraint,
)
from bulkflow.core.levelset_geometry import (
    GeometryFrame,
    LevelSetField,
    boundary_frame,
    frames_from_derivatives,
)
from bulkflow.core.mesh_fe import (
    BasisValues,
    ElementGeometry,
    FunctionSpace,
    HexMesh,
    build_dof_map,
    default_quadrature_degree,
    element_geometry,
    face_quadrature_data,
    physical_basis,
    quadrature,
)
from bulkflow.core.tdc_ops import viscous_divergence
from bulkflow.core.solver_factory import get_linear_solver
from utils import logger

VectorField = Callable[[np.ndarray, float], np.ndarray]
STABILIZATIONS = ("none", "pspg", "brezzi_pitkaranta")
DEFAULT_PENALTY_SCALE = 1e3


# ---------------------------------------------------------------------------
# problem description
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class DirichletCondition:
    """Prescribed velocity on the faces tagged ``tag``.

    ``value(param, phys, t)`` maps ``(N, 3)`` parameter and physical node
    coordinates to ``(N, 3)`` velocities. At shared nodes the higher
    ``priority`` wins.
    """

    tag: str
    value: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    priority: int = 0


@dataclass(frozen=True)
class NeumannCondition:
    """Prescribed traction on the faces tagged ``tag``; None means traction-free."""

    tag: str
    traction: Optional[VectorField] = None


@dataclass(frozen=True)
class PressureConstraint:
    kind: str = "none"
    nodes: Tuple[int, ...] = ()
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "pin_at_nodes", "zero_weighted_mean"):
            raise AssemblyError(f"unknown pressure constraint '{self.kind}'")
        if self.kind == "pin_at_nodes" and len(self.nodes) == 0:
            raise AssemblyError("pin_at_nodes needs at least one pressure node")

    @classmethod
    def pin(cls, nodes: Sequence[int], value: float = 0.0) -> "PressureConstraint":
        return cls("pin_at_nodes", tuple(int(n) for n in nodes), float(value))

    @classmethod
    def zero_mean(cls) -> "PressureConstraint":
        return cls("zero_weighted_mean")

    @property
    def active(self) -> bool:
        return self.kind != "none"


@dataclass(frozen=True)
class FlowProblem:
    """Material data, forcing and boundary data of one surface flow problem.

    Attributes:
        mu: Dynamic viscosity.
        rho: Density; zero gives Stokes flow.
        alpha: Penalty coefficient; None selects ``penalty_scale * mu / h_el^2`` per element.
        body_force: ``f(x, t)`` as force per area, projected tangentially during assembly.
        stabilization: ``none``, ``pspg`` or ``brezzi_pitkaranta``.
        free_tags: Boundary tags carrying no condition (level sets bounding the bulk domain).
        advection: Include the advection block; off reduces every run to (time-dependent) Stokes.
        steady_force: The body force does not depend on time.
    """

    mu: float
    rho: float = 1.0
    alpha: Optional[float] = None
    penalty_scale: float = DEFAULT_PENALTY_SCALE
    body_force: Optional[VectorField] = None
    stabilization: str = "none"
    dirichlet: Tuple[DirichletCondition, ...] = ()
    neumann: Tuple[NeumannCondition, ...] = ()
    pressure_constraint: PressureConstraint = PressureConstraint()
    allow_pspg_with_taylor_hood: bool = False
    free_tags: Tuple[str, ...] = ("free",)
    advection: bool = True
    steady_force: bool = True

    def __post_init__(self):
        if self.mu <= 0:
            raise NonpositiveViscosity(f"mu = {self.mu} must be positive")
        if self.rho < 0:
            raise AssemblyError(f"rho = {self.rho} must be nonnegative")
        if self.alpha is not None and self.alpha < 0:
            raise AssemblyError(f"penalty alpha = {self.alpha} must be nonnegative")
        if self.stabilization not in STABILIZATIONS:
            raise AssemblyError(f"unknown stabilization '{self.stabilization}'")

    @property
    def nonlinear(self) -> bool:
        return self.advection and self.rho > 0

    def has_neumann_boundary(self, tags) -> bool:
        """A Neumann boundary is any tagged face that is neither Dirichlet nor free."""
        fixed = {d.tag for d in self.dirichlet} | set(self.free_tags)
        return any(tag not in fixed for tag in tags)

    def force_at(self, x: np.ndarray, t: float) -> np.ndarray:
        if self.body_force is None:
            return np.zeros(x.shape)
        return np.broadcast_to(np.asarray(self.body_force(x, t), dtype=float), x.shape)


def gravity_force(rho: float, g: Sequence[float] = (0.0, 0.0, -9.81)) -> VectorField:
    """Constant body force ``f = rho * g``; assembly keeps only its tangential part."""
    force = float(rho) * np.asarray(g, dtype=float)

    def body_force(x: np.ndarray, t: float) -> np.ndarray:
        return np.broadcast_to(force, x.shape)

    return body_force


# ---------------------------------------------------------------------------
# spaces, states and systems
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class FlowSpaces:
    mesh: HexMesh = field(repr=False)
    velocity: FunctionSpace = field(repr=False)
    pressure: FunctionSpace = field(repr=False)
    quad_degree: int
    regime: str
    cache: Dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return self.velocity.n_dofs

    @property
    def n_velocity(self) -> int:
        return 3 * self.velocity.n_dofs

    @property
    def n_pressure(self) -> int:
        return self.pressure.n_dofs

    def velocity_indices(self, element_ids: np.ndarray) -> np.ndarray:
        """Global velocity indices ``(E, 3, n_local)``."""
        dofs = self.velocity.dof_map[element_ids]
        return np.arange(3)[None, :, None] * self.n_nodes + dofs[:, None, :]


def build_flow_spaces(mesh: HexMesh, q_u: int, pressure_orders=None, quad_degree: Optional[int] = None) -> FlowSpaces:
    """Velocity space of order ``q_u`` with its pressure partner.

    ``pressure_orders`` defaults to the Taylor-Hood choice ``q_u - 1``; an
    int or a per-direction triple may be given.
    """
    q_u = int(q_u)
    if pressure_orders is None:
        pressure_orders = q_u - 1
    orders = tuple(int(q) for q in (pressure_orders if np.ndim(pressure_orders) else (pressure_orders,) * 3))
    if orders == (q_u,) * 3:
        regime = "equal_order"
    elif orders == (q_u - 1,) * 3:
        regime = "taylor_hood"
    elif orders == (q_u - 1, q_u - 1, q_u):
        regime = "anisotropic"
    else:
        raise InvalidDivisions(f"pressure orders {orders} form no supported pair with q_u = {q_u}")
    velocity = build_dof_map(mesh, (q_u,) * 3)
    pressure = build_dof_map(mesh, orders)
    degree = quad_degree if quad_degree is not None else default_quadrature_degree(mesh.q_geom, q_u)
    logger.info(f"函数空间: {regime}, 速度自由度 {3 * velocity.n_dofs}, 压力自由度 {pressure.n_dofs}")
    return FlowSpaces(mesh, velocity, pressure, int(degree), regime)


@dataclass(frozen=True)
class FlowState:
    """Velocity coefficients ``(3, n_nodes)``, pressure coefficients and time."""

    velocity: np.ndarray
    pressure: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        if not (np.all(np.isfinite(self.velocity)) and np.all(np.isfinite(self.pressure))):
            raise LinearSolveFailure("flow state has non-finite coefficients")

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.velocity.ravel(), self.pressure])

    @classmethod
    def zeros(cls, spaces: FlowSpaces, time: float = 0.0) -> "FlowState":
        return cls(np.zeros((3, spaces.n_nodes)), np.zeros(spaces.n_pressure), time)

    @classmethod
    def from_vector(cls, z: np.ndarray, spaces: FlowSpaces, time: float = 0.0) -> "FlowState":
        nv = spaces.n_velocity
        return cls(np.array(z[:nv]).reshape(3, spaces.n_nodes), np.array(z[nv:nv + spaces.n_pressure]), time)

    @classmethod
    def interpolate(cls, spaces: FlowSpaces, velocity: Callable[[np.ndarray], np.ndarray],
                    pressure: Optional[Callable[[np.ndarray], np.ndarray]] = None, time: float = 0.0) -> "FlowState":
        """Nodal interpolant of given physical fields."""
        u = np.asarray(velocity(spaces.velocity.dof_coords), dtype=float).T
        p = (np.zeros(spaces.n_pressure) if pressure is None
             else np.asarray(pressure(spaces.pressure.dof_coords), dtype=float).reshape(-1))
        return cls(np.ascontiguousarray(u), p, time)


@dataclass(frozen=True)
class DirichletPrescription:
    """Global velocity indices and their prescribed values."""

    dofs: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.dofs)


@dataclass(frozen=True)
class SaddleSystem:
    """Assembled blocks; all sparse in CSR format.

    ``T, D, A, G`` act on velocities, ``C`` maps velocities to pressure rows
    (``+ int w_p div u``), ``S`` is the pressure-pressure stabilization block,
    ``Pv`` and ``Pm`` the velocity and mass couplings of PSPG. ``mean`` holds
    the co-area weights of the pressure basis for the zero-mean constraint.
    """

    spaces: FlowSpaces = field(repr=False)
    T: sparse.csr_matrix
    D: sparse.csr_matrix
    A: sparse.csr_matrix
    G: sparse.csr_matrix
    C: sparse.csr_matrix
    S: sparse.csr_matrix
    Pv: sparse.csr_matrix
    Pm: sparse.csr_matrix
    rhs_u: np.ndarray
    rhs_p: np.ndarray
    mean: np.ndarray
    has_neumann: bool
    prescribed: Optional[DirichletPrescription] = None
    constraint: PressureConstraint = PressureConstraint()
    velocity_operator: Optional[sparse.csr_matrix] = None
    continuity_extra: Optional[sparse.csr_matrix] = None

    @property
    def K(self) -> sparse.csr_matrix:
        return (self.D + self.A + self.G).tocsr()

    @property
    def shape(self) -> Tuple[int, int]:
        return self.spaces.n_velocity, self.spaces.n_pressure


@dataclass(frozen=True)
class AssemblyOptions:
    threads: int = 1
    chunk_size: int = 32
    cache_contexts: bool = True

    @classmethod
    def from_config(cls, run_config=None) -> "AssemblyOptions":
        if run_config is None:
            from utils.config import config

            return cls(threads=config.THREADS, chunk_size=config.CHUNK_SIZE)
        return cls(threads=run_config.threads, chunk_size=run_config.chunk_size)


# ---------------------------------------------------------------------------
# quadrature context
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class QuadContext:
    """Everything the element kernels need on one chunk of elements.

    ``weights`` already include the co-area factor ``|grad phi|``;
    ``vel_surf``/``pre_surf`` are the surface gradients ``P grad B``.
    """

    element_ids: np.ndarray
    x: np.ndarray
    weights: np.ndarray
    frame: GeometryFrame
    vel: BasisValues
    pre: BasisValues
    vel_surf: np.ndarray
    pre_surf: np.ndarray
    h: np.ndarray
    curvature_grad: Optional[np.ndarray] = None


def _shares_mesh(levelset: LevelSetField, mesh: HexMesh) -> bool:
    other = levelset.mesh
    return other is not None and (other.nodes is mesh.nodes or (
        other.nodes.shape == mesh.nodes.shape and np.array_equal(other.elements, mesh.elements)
        and np.array_equal(other.nodes, mesh.nodes)))


def levelset_derivatives(levelset: LevelSetField, mesh: HexMesh, geometry: ElementGeometry) -> Tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian of phi at the points of ``geometry``.

    Nodal fields on the same mesh are differentiated element-wise through the
    geometry basis; other fields are evaluated at the physical points.
    """
    if not levelset.is_analytic and _shares_mesh(levelset, mesh) and geometry.second is not None:
        basis = physical_basis(mesh.geometry_basis, geometry, hessians=True)
        coeffs = levelset.nodal_values[mesh.elements[geometry.element_ids]]
        return (np.einsum("eqni,en->eqi", basis.grads, coeffs),
                np.einsum("eqnij,en->eqij", basis.hess, coeffs))
    _, grad, hess = levelset.evaluate(geometry.x)
    return grad, hess


def curvature_gradient(levelset: LevelSetField, mesh: HexMesh, geometry: ElementGeometry) -> np.ndarray:
    """Classical gradient of the mean curvature at the points of an unpaired ``geometry``.

    A closed form is used when the level set carries one; otherwise the
    curvature is interpolated element-wise from the geometry nodes and the
    interpolant is differentiated.
    """
    if levelset.curvature_gradient_fn is not None:
        return np.asarray(levelset.curvature_gradient_fn(geometry.x), dtype=float)
    nodes = element_geometry(mesh, geometry.element_ids, mesh.geometry_basis.lattice, second=True)
    grad, hess = levelset_derivatives(levelset, mesh, nodes)
    kappa = frames_from_derivatives(grad, hess, levelset.gradient_floor).mean_curvature
    return np.einsum("eqni,en->eqi", physical_basis(mesh.geometry_basis, geometry).grads, kappa)


def quadrature_context(spaces: FlowSpaces, levelset: LevelSetField, element_ids: np.ndarray,
                       hessians: bool = False) -> QuadContext:
    mesh = spaces.mesh
    rule = quadrature(spaces.quad_degree)
    geometry = element_geometry(mesh, element_ids, rule.points, second=hessians or not levelset.is_analytic)
    grad, hess = levelset_derivatives(levelset, mesh, geometry)
    frame = frames_from_derivatives(grad, hess, levelset.gradient_floor)
    weights = rule.weights[None, :] * np.abs(geometry.det) * frame.grad_norm
    vel = physical_basis(spaces.velocity.basis, geometry, hessians)
    pre = physical_basis(spaces.pressure.basis, geometry)
    vel_surf = np.einsum("eqij,eqnj->eqni", frame.P, vel.grads)
    pre_surf = np.einsum("eqij,eqnj->eqni", frame.P, pre.grads)
    kappa_grad = curvature_gradient(levelset, mesh, geometry) if hessians else None
    return QuadContext(geometry.element_ids, geometry.x, weights, frame, vel, pre, vel_surf, pre_surf,
                       mesh.element_size[geometry.element_ids], kappa_grad)


def _chunks(spaces: FlowSpaces, options: AssemblyOptions) -> List[np.ndarray]:
    ids = np.arange(spaces.mesh.n_elements)
    size = max(int(options.chunk_size), 1)
    return [ids[start:start + size] for start in range(0, len(ids), size)]


def _context(spaces, levelset, ids, hessians, options) -> QuadContext:
    if not options.cache_contexts:
        return quadrature_context(spaces, levelset, ids, hessians)
    cache = spaces.cache
    if cache.get("levelset") is not levelset:
        # contexts belong to one level set
        cache.clear()
        cache["levelset"] = levelset
    key = (int(ids[0]), len(ids), hessians)
    ctx = cache.get(key)
    if ctx is None:
        ctx = quadrature_context(spaces, levelset, ids, hessians)
        cache[key] = ctx
    return ctx


def _run_chunks(spaces: FlowSpaces, kernel: Callable[[np.ndarray], Dict], options: AssemblyOptions) -> List[Dict]:
    """Apply ``kernel`` to every element chunk; results come back in chunk order."""
    chunks = _chunks(spaces, options)
    if options.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=options.threads) as executor:
            return list(executor.map(kernel, chunks))
    return [kernel(chunk) for chunk in chunks]


def _triplets(local: np.ndarray, rows: np.ndarray, cols: np.ndarray):
    E, R, C = local.shape
    r = np.broadcast_to(rows.reshape(E, R, 1), (E, R, C))
    c = np.broadcast_to(cols.reshape(E, 1, C), (E, R, C))
    return r.ravel(), c.ravel(), local.ravel()


def _merge_matrix(results: List[Dict], key: str, shape: Tuple[int, int]) -> sparse.csr_matrix:
    parts = [res[key] for res in results if key in res]
    if not parts:
        return sparse.csr_matrix(shape)
    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    return sparse.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()


def _merge_vector(results: List[Dict], key: str, n: int) -> np.ndarray:
    parts = [res[key] for res in results if key in res]
    if not parts:
        return np.zeros(n)
    idx = np.concatenate([p[0].ravel() for p in parts])
    vals = np.concatenate([p[1].ravel() for p in parts])
    return np.bincount(idx, weights=vals, minlength=n)


def _penalty(problem: FlowProblem, h: np.ndarray) -> np.ndarray:
    if problem.alpha is not None:
        return np.full(len(h), float(problem.alpha))
    return problem.penalty_scale * problem.mu / h ** 2


def _velocity_at(ctx: QuadContext, spaces: FlowSpaces, state: FlowState) -> np.ndarray:
    coeffs = state.velocity[:, spaces.velocity.dof_map[ctx.element_ids]]
    return np.einsum("eqa,iea->eqi", ctx.vel.values, coeffs)


# ---------------------------------------------------------------------------
# element kernels
# ---------------------------------------------------------------------------
def _stokes_kernel(problem: FlowProblem, spaces: FlowSpaces, ctx: QuadContext, time: float) -> Dict:
    W, B, s = ctx.weights, ctx.vel.values, ctx.vel_surf
    P, n, H = ctx.frame.P, ctx.frame.n, ctx.frame.H
    M = ctx.pre.values
    E, _, nl = B.shape
    opt = dict(optimize=True)

    T = problem.rho * np.einsum("eq,eqa,eqb,eqij->eiajb", W, B, B, P, **opt)

    Hs = np.einsum("eqik,eqak->eqai", H, s)
    HH = np.einsum("eqij,eqij->eq", H, H)
    D = (0.5 * np.einsum("eq,eqij,eqak,eqbk->eiajb", W, P, s, s, **opt)
         + 0.5 * np.einsum("eq,eqbi,eqaj->eiajb", W, s, s, **opt)
         - np.einsum("eq,eqb,eqj,eqai->eiajb", W, B, n, Hs, **opt)
         - np.einsum("eq,eqa,eqi,eqbj->eiajb", W, B, n, Hs, **opt)
         + np.einsum("eq,eqa,eqb,eqi,eqj->eiajb", W * HH, B, B, n, n, **opt))
    D *= 2.0 * problem.mu

    alpha = _penalty(problem, ctx.h)
    G = np.einsum("e,eq,eqa,eqb,eqi,eqj->eiajb", alpha, W, B, B, n, n, **opt)

    kappa = ctx.frame.mean_curvature
    C = (np.einsum("eq,eqc,eqbj->ecjb", W, M, s, **opt)
         - np.einsum("eq,eqc,eqb,eqj->ecjb", W * kappa, M, B, n, **opt))

    Pf = np.einsum("eqij,eqj->eqi", P, problem.force_at(ctx.x, time))
    f = np.einsum("eq,eqa,eqi->eia", W, B, Pf, **opt)

    vidx = spaces.velocity_indices(ctx.element_ids).reshape(E, 3 * nl)
    pidx = spaces.pressure.dof_map[ctx.element_ids]
    size = 3 * nl
    return {
        "T": _triplets(T.reshape(E, size, size), vidx, vidx),
        "D": _triplets(D.reshape(E, size, size), vidx, vidx),
        "G": _triplets(G.reshape(E, size, size), vidx, vidx),
        "C": _triplets(C.reshape(E, pidx.shape[1], size), pidx, vidx),
        "f": (vidx, f.reshape(E, size)),
        "mean": (pidx, np.einsum("eq,eqc->ec", W, M)),
    }


def _load_kernel(problem: FlowProblem, spaces: FlowSpaces, ctx: QuadContext, time: float) -> Dict:
    W, B = ctx.weights, ctx.vel.values
    Pf = np.einsum("eqij,eqj->eqi", ctx.frame.P, problem.force_at(ctx.x, time))
    f = np.einsum("eq,eqa,eqi->eia", W, B, Pf, optimize=True)
    vidx = spaces.velocity_indices(ctx.element_ids)
    return {"f": (vidx, f)}


def _advection_kernel(problem: FlowProblem, spaces: FlowSpaces, ctx: QuadContext, state: FlowState) -> Dict:
    W, B, s = ctx.weights, ctx.vel.values, ctx.vel_surf
    P, n, H = ctx.frame.P, ctx.frame.n, ctx.frame.H
    E, _, nl = B.shape
    beta = np.einsum("eqij,eqj->eqi", P, _velocity_at(ctx, spaces, state))
    s_beta = np.einsum("eqbk,eqk->eqb", s, beta)
    H_beta = np.einsum("eqik,eqk->eqi", H, beta)
    A = (np.einsum("eq,eqa,eqij,eqb->eiajb", W, B, P, s_beta, optimize=True)
         - np.einsum("eq,eqa,eqb,eqj,eqi->eiajb", W, B, B, n, H_beta, optimize=True))
    A *= problem.rho
    vidx = spaces.velocity_indices(ctx.element_ids).reshape(E, 3 * nl)
    return {"A": _triplets(A.reshape(E, 3 * nl, 3 * nl), vidx, vidx)}


def _brezzi_pitkaranta_kernel(spaces: FlowSpaces, ctx: QuadContext, tau_p: Optional[float]) -> Dict:
    tau = ctx.h if tau_p is None else np.full(len(ctx.h), float(tau_p))
    S = np.einsum("e,eq,eqck,eqdk->ecd", tau, ctx.weights, ctx.pre_surf, ctx.pre_surf, optimize=True)
    pidx = spaces.pressure.dof_map[ctx.element_ids]
    return {"S": _triplets(S, pidx, pidx)}


def stabilization_tau(kind: str, u_norm, h_el, mu: float, dt: Optional[float] = None):
    """PSPG parameter ``[(2/dt)^2 + (2|u|/h)^2 + (4 mu/h^2)^2]^(-1/2)``; the dt term only when instationary."""
    if kind not in ("stationary", "instationary"):
        raise AssemblyError(f"unknown stabilization kind '{kind}'")
    h = np.asarray(h_el, dtype=float)
    if np.any(h <= 0):
        raise AssemblyError("element size must be positive")
    if mu <= 0:
        raise NonpositiveViscosity(f"mu = {mu} must be positive")
    u = np.asarray(u_norm, dtype=float)
    bracket = (2.0 * u / h) ** 2 + (4.0 * mu / h ** 2) ** 2
    if kind == "instationary":
        if dt is None or dt <= 0:
            raise AssemblyError("instationary stabilization needs a positive dt")
        bracket = bracket + (2.0 / dt) ** 2
    return bracket ** -0.5


def momentum_operator(problem: FlowProblem, frame: GeometryFrame, curvature_grad: np.ndarray, u: np.ndarray,
                      grad_u: np.ndarray, hess_u: np.ndarray, beta: Optional[np.ndarray] = None) -> np.ndarray:
    """Strong momentum operator ``rho P (beta . grad_G) u_t - P div_G(2 mu eps_cov(u_t))`` with ``u_t = P u``.

    Frame fields have shape ``(E, q, ...)``. ``u``, ``grad_u`` and ``hess_u``
    may carry extra axes between the point axes and their components, e.g.
    ``(E, q, b, j, 3)`` for lifted basis functions. Pressure and force are
    left to the caller; ``beta=None`` drops the transport term.
    """
    extra = u.ndim - 3

    def lift(a: np.ndarray) -> np.ndarray:
        return a.reshape(a.shape[:2] + (1,) * extra + a.shape[2:])

    P, n, H, N = (lift(a) for a in (frame.P, frame.n, frame.H, frame.normal_gradient))
    dP = lift(frame.projector_gradient())
    kappa_grad = lift(np.einsum("eqij,eqj->eqi", frame.P, curvature_grad))
    visc = viscous_divergence(grad_u, hess_u, P, dP)
    # eps_cov(u_t) = eps_cov(u) - u_n H and P div_G(u_n H) = H grad_G u_n + u_n grad_G kappa
    u_n = np.einsum("...i,...i->...", u, n)
    grad_un = np.einsum("...ik,...i->...k", grad_u, n) + np.einsum("...i,...ik->...k", u, N)
    normal_part = np.einsum("...km,...m->...k", H, grad_un) + u_n[..., None] * kappa_grad
    residual = -problem.mu * visc + 2.0 * problem.mu * normal_part
    if beta is not None:
        beta = lift(np.einsum("eqij,eqj->eqi", frame.P, beta))
        transport = np.einsum("...kl,...lm,...m->...k", P, grad_u, beta)
        residual = residual + problem.rho * (transport - u_n[..., None] * np.einsum("...ik,...k->...i", H, beta))
    return residual


def _pspg_kernel(problem: FlowProblem, spaces: FlowSpaces, ctx: QuadContext, state: FlowState, kind: str,
                 dt: Optional[float], time: float) -> Dict:
    W, B, grads, hess = ctx.weights, ctx.vel.values, ctx.vel.grads, ctx.vel.hess
    sp, P = ctx.pre_surf, ctx.frame.P
    E, nq, nl = B.shape
    opt = dict(optimize=True)

    # tau at velocity nodes, interpolated to quadrature points
    node_u = np.linalg.norm(state.velocity[:, spaces.velocity.dof_map[ctx.element_ids]], axis=0)
    if not problem.nonlinear:
        node_u = np.zeros_like(node_u)
    tau_nodes = stabilization_tau(kind, node_u, ctx.h[:, None], problem.mu, dt)
    tau = np.clip(np.einsum("eqa,ea->eq", B, tau_nodes), 0.0, None)
    inv_rho = 1.0 / problem.rho if problem.rho > 0 else 1.0
    Wt = W * tau * inv_rho

    eye = np.eye(3)
    u = np.einsum("lj,eqb->eqbjl", eye, B)
    grad_u = np.einsum("lj,eqbk->eqbjlk", eye, grads)
    hess_u = np.einsum("lj,eqbkm->eqbjlkm", eye, hess)
    beta = _velocity_at(ctx, spaces, state) if problem.nonlinear else None
    residual = momentum_operator(problem, ctx.frame, ctx.curvature_grad, u, grad_u, hess_u, beta)

    Pv = np.einsum("eq,eqck,eqbjk->ecjb", Wt, sp, residual, **opt)
    S = np.einsum("eq,eqck,eqdk->ecd", Wt, sp, sp, **opt)
    Pf = np.einsum("eqij,eqj->eqi", P, problem.force_at(ctx.x, time))
    g = np.einsum("eq,eqck,eqk->ec", Wt, sp, Pf, **opt)

    vidx = spaces.velocity_indices(ctx.element_ids).reshape(E, 3 * nl)
    pidx = spaces.pressure.dof_map[ctx.element_ids]
    npl = pidx.shape[1]
    out = {
        "Pv": _triplets(Pv.reshape(E, npl, 3 * nl), pidx, vidx),
        "S": _triplets(S, pidx, pidx),
        "g": (pidx, g),
    }
    if kind == "instationary":
        # rho du/dt scaled by tau/rho
        Pm = np.einsum("eq,eqcj,eqb->ecjb", Wt * problem.rho, sp, B, **opt)
        out["Pm"] = _triplets(Pm.reshape(E, npl, 3 * nl), pidx, vidx)
    return out


# ---------------------------------------------------------------------------
# assembly operations
# ---------------------------------------------------------------------------
def _empty(shape) -> sparse.csr_matrix:
    return sparse.csr_matrix(shape)


def _boundary_tags(spaces: FlowSpaces) -> set:
    boundary = spaces.mesh.boundary
    return set() if boundary is None else boundary.tag_set()


def neumann_load(problem: FlowProblem, spaces: FlowSpaces, levelset: LevelSetField, time: float = 0.0) -> np.ndarray:
    """Boundary term ``int w_t . t_hat (q . m) |grad phi| dA`` over the Neumann faces."""
    f = np.zeros(spaces.n_velocity)
    boundary = spaces.mesh.boundary
    if boundary is None:
        return f
    mesh = spaces.mesh
    for condition in problem.neumann:
        faces = boundary.select(condition.tag)
        if condition.traction is None or len(faces) == 0:
            continue
        data = face_quadrature_data(mesh, faces, spaces.quad_degree)
        F, nq = data.weights.shape
        elems = np.repeat(data.elements, nq)
        refs = data.ref_points.reshape(-1, 3)
        geometry = element_geometry(mesh, elems, refs, paired=True, second=not levelset.is_analytic)
        grad, hess = levelset_derivatives(levelset, mesh, geometry)
        frame = boundary_frame(frames_from_derivatives(grad[:, 0], hess[:, 0], levelset.gradient_floor),
                               data.m.reshape(-1, 3))
        weight = frame.boundary_weight() * data.weights.ravel()
        traction = np.asarray(condition.traction(data.x.reshape(-1, 3), time), dtype=float)
        Pt = np.einsum("pij,pj->pi", frame.P, traction)
        values = physical_basis(spaces.velocity.basis, geometry).values[:, 0]
        local = np.einsum("p,pa,pi->pia", weight, values, Pt)
        idx = spaces.velocity_indices(elems)
        f += np.bincount(idx.ravel(), weights=local.ravel(), minlength=spaces.n_velocity)
    return f


def assemble_load(problem: FlowProblem, spaces: FlowSpaces, levelset: LevelSetField, time: float = 0.0,
                  options: Optional[AssemblyOptions] = None) -> np.ndarray:
    """Right-hand side of the momentum rows at ``time`` (body force plus traction)."""
    options = options or AssemblyOptions()
    f = neumann_load(problem, spaces, levelset, time)
    if problem.body_force is None:
        return f
    results = _run_chunks(
        spaces, lambda ids: _load_kernel(problem, spaces, _context(spaces, levelset, ids, False, options), time), options
    )
    return f + _merge_vector(results, "f", spaces.n_velocity)


def assemble_stokes(problem: FlowProblem, spaces: FlowSpaces, levelset: LevelSetField,
                    options: Optional[AssemblyOptions] = None, time: float = 0.0) -> SaddleSystem:
    """Assemble the stationary Stokes blocks ``T, D, G, C`` and the load.

    Raises:
        MissingStabilization: Equal-order pair without stabilization.
        NoPressureConstraint: No Neumann boundary and no pressure constraint.
    """
    options = options or AssemblyOptions()
    if spaces.regime == "equal_order" and problem.stabilization == "none":
        raise MissingStabilization("equal-order velocity/pressure pair needs PSPG or Brezzi-Pitkaranta")
    has_neumann = problem.has_neumann_boundary(_boundary_tags(spaces))
    if not has_neumann and not problem.pressure_constraint.active:
        raise NoPressureConstraint("pressure is only defined up to a constant; select a pressure constraint")

    nv, npr = spaces.n_velocity, spaces.n_pressure
    results = _run_chunks(
        spaces, lambda ids: _stokes_kernel(problem, spaces, _context(spaces, levelset, ids, False, options), time), options
    )
    f = _merge_vector(results, "f", nv) + neumann_load(problem, spaces, levelset, time)
    system = SaddleSystem(
        spaces=spaces,
        T=_merge_matrix(results, "T", (nv, nv)),
        D=_merge_matrix(results, "D", (nv, nv)),
        A=_empty((nv, nv)),
        G=_merge_matrix(results, "G", (nv, nv)),
        C=_merge_matrix(results, "C", (npr, nv)),
        S=_empty((npr, npr)),
        Pv=_empty((npr, nv)),
        Pm=_empty((npr, nv)),
        rhs_u=f,
        rhs_p=np.zeros(npr),
        mean=_merge_vector(results, "mean", npr),
        has_neumann=has_neumann,
    )
    logger.debug(f"Stokes 组装完成: {spaces.mesh.n_elements} 单元, 非零元 D={system.D.nnz}, C={system.C.nnz}")
    return system


def assemble_advection(problem: FlowProblem, spaces: FlowSpaces, levelset: LevelSetField, state: FlowState,
                       options: Optional[AssemblyOptions] = None) -> sparse.csr_matrix:
    options = options or AssemblyOptions()
    nv = spaces.n_velocity
    if not problem.nonlinear:
        return _empty((nv, nv))
    results = _run_chunks(
        spaces, lambda ids: _advection_kernel(problem, spaces, _context(spaces, levelset, ids, False, options), state),
        options,
    )
    return _merge_matrix(results, "A", (nv, nv))


def assemble_ns_picard_step(problem: FlowProblem, spaces: FlowSpaces, levelset: LevelSetField, u_prev: FlowState,
                            options: Optional[AssemblyOptions] = None, base: Optional[SaddleSystem] = None) -> SaddleSystem:
    """Stokes blocks plus the advection block linearized at ``P u_prev``.

    ``base`` reuses a previously assembled Stokes system.
    """
    base = base if base is not None else assemble_stokes(problem, spaces, levelset, options, u_prev.time)
    return replace(base, A=assemble_advection(problem, spaces, levelset, u_prev, options))


def add_brezzi_pitkaranta(system: SaddleSystem, spaces: FlowSpaces, levelset: LevelSetField,
                          tau_p: Optional[float] = None, options: Optional[AssemblyOptions] = None) -> SaddleSystem:
    """Add ``tau_p int grad_G w_p . grad_G p |grad phi|`` to the pressure block; ``tau_p=None`` uses ``h_el``."""
    if tau_p is not None and tau_p < 0:
        raise AssemblyError(f"tau_p = {tau_p} must be nonnegative")
    if tau_p == 0:
        return system
    options = options or AssemblyOptions()
    npr = spaces.n_pressure
    results = _run_chunks(
        spaces, lambda ids: _brezzi_pitkaranta_kernel(spaces, _context(spaces, levelset, ids, False, options), tau_p),
        options,
    )
    return replace(system, S=(system.S + _merge_matrix(results, "S", (npr, npr))).tocsr())


def require_second_derivatives(levelset: LevelSetField, spaces: FlowSpaces) -> None:
    if not levelset.is_analytic and spaces.mesh.q_geom < 2:
        raise MissingSecondDerivatives("a nodal level set of geometry order 1 has no usable second derivatives")


def add_pspg(system: SaddleSystem, problem: FlowProblem, spaces: FlowSpaces, levelset: LevelSetField,
             state: FlowState, kind: str = "stationary", options: Optional[AssemblyOptions] = None,
             dt: Optional[float] = None) -> SaddleSystem:
    """Add the residual-based PSPG terms to the continuity rows.

    Element-interior sums of ``tau/rho int grad_G w_p . r(u, p) |grad phi|``
    with the strong residual ``r = rho (u.grad)u - P div sigma - f`` (plus
    ``rho du/dt`` when instationary). ``tau`` follows ``stabilization_tau``
    evaluated at the velocity nodes of each element.

    Raises:
        MissingSecondDerivatives: The level set cannot supply second derivatives.
    """
    require_second_derivatives(levelset, spaces)
    options = options or AssemblyOptions()
    nv, npr = spaces.n_velocity, spaces.n_pressure
    results = _run_chunks(
        spaces,
        lambda ids: _pspg_kernel(problem, spaces, _context(spaces, levelset, ids, True, options), state, kind, dt,
                                 state.time),
        options,
    )
    return replace(
        system,
        Pv=(system.Pv + _merge_matrix(results, "Pv", (npr, nv))).tocsr(),
        S=(system.S + _merge_matrix(results, "S", (npr, npr))).tocsr(),
        Pm=(system.Pm + _merge_matrix(results, "Pm", (npr, nv))).tocsr(),
        rhs_p=system.rhs_p + _merge_vector(results, "g", npr),
    )


def assemble_base(problem: FlowProblem, spaces: FlowSpaces, levelset: LevelSetField,
                  options: Optional[AssemblyOptions] = None, time: float = 0.0) -> SaddleSystem:
    """Stokes blocks plus the state-independent stabilization."""
    system = assemble_stokes(problem, spaces, levelset, options, time)
    if problem.stabilization == "brezzi_pitkaranta":
        system = add_brezzi_pitkaranta(system, spaces, levelset, None, options)
    return system


# ---------------------------------------------------------------------------
# constraints
# ---------------------------------------------------------------------------
def _face_node_dofs(space: FunctionSpace, elements: np.ndarray, local_faces: np.ndarray) -> np.ndarray:
    basis = space.basis
    found = [space.dof_map[elements[local_faces == f]][:, basis.face_indices(f)].ravel() for f in range(6)]
    return np.unique(np.concatenate(found)) if found else np.zeros(0, dtype=int)


def dirichlet_prescriptions(problem: FlowProblem, spaces: FlowSpaces, time: float = 0.0) -> DirichletPrescription:
    """Collect the prescribed velocity values of all Dirichlet conditions at ``time``.

    Raises:
        ConflictingPrescriptions: Two conditions of equal priority prescribe
            different values at a shared node.
    """
    nu = spaces.n_nodes
    if not problem.dirichlet:
        return DirichletPrescription(np.zeros(0, dtype=int), np.zeros(0))
    boundary = spaces.mesh.boundary
    if boundary is None:
        raise AssemblyError("Dirichlet conditions need a mesh with tagged boundary faces")
    priority = np.full(nu, -np.inf)
    values = np.zeros((nu, 3))
    velocity = spaces.velocity
    for condition in sorted(problem.dirichlet, key=lambda c: -c.priority):
        faces = boundary.select(condition.tag)
        if len(faces) == 0:
            logger.warning(f"Dirichlet 边界 '{condition.tag}' 没有对应的面")
            continue
        dofs = _face_node_dofs(velocity, faces.elements, faces.local_faces)
        vals = np.asarray(condition.value(velocity.dof_param_coords[dofs], velocity.dof_coords[dofs], time), dtype=float)
        vals = np.broadcast_to(vals, (len(dofs), 3))
        same = priority[dofs] == condition.priority
        if np.any(same):
            clash = np.abs(values[dofs[same]] - vals[same]) > 1e-12 * (1.0 + np.abs(vals[same]))
            if np.any(clash):
                node = int(dofs[same][np.nonzero(clash.any(axis=1))[0][0]])
                raise ConflictingPrescriptions(f"node {node} receives different values from '{condition.tag}'")
        fresh = priority[dofs] < condition.priority
        values[dofs[fresh]] = vals[fresh]
        priority[dofs[fresh]] = condition.priority
    nodes = np.nonzero(np.isfinite(priority))[0]
    dofs = (np.arange(3)[:, None] * nu + nodes[None, :]).ravel()
    return DirichletPrescription(dofs, values[nodes].T.ravel())


def apply_dirichlet(system: SaddleSystem, prescriptions: DirichletPrescription) -> SaddleSystem:
    """Record velocity prescriptions; elimination happens when the global matrix is built.

    Raises:
        ConflictingPrescriptions: A DOF is prescribed twice with different values.
    """
    dofs = np.asarray(prescriptions.dofs, dtype=int)
    vals = np.asarray(prescriptions.values, dtype=float)
    if np.any((dofs < 0) | (dofs >= system.spaces.n_velocity)):
        raise AssemblyError("prescribed DOF outside the velocity space")
    if system.prescribed is not None:
        dofs = np.concatenate([system.prescribed.dofs, dofs])
        vals = np.concatenate([system.prescribed.values, vals])
    unique, first, inverse = np.unique(dofs, return_index=True, return_inverse=True)
    reference = vals[first][inverse]
    if np.any(np.abs(vals - reference) > 1e-12 * (1.0 + np.abs(reference))):
        raise ConflictingPrescriptions("a velocity DOF is prescribed with two different values")
    return replace(system, prescribed=DirichletPrescription(unique, vals[first]))


def apply_pressure_constraint(system: SaddleSystem, constraint: PressureConstraint) -> SaddleSystem:
    """Select the pressure constraint.

    Raises:
        RedundantConstraint: A Neumann boundary already fixes the pressure, or
            a constraint was applied before.
    """
    if not constraint.active:
        return system
    if system.has_neumann:
        raise RedundantConstraint("the Neumann boundary already fixes the pressure level")
    if system.constraint.active:
        raise RedundantConstraint(f"pressure constraint '{system.constraint.kind}' is already applied")
    if constraint.kind == "pin_at_nodes":
        nodes = np.asarray(constraint.nodes)
        if np.any((nodes < 0) | (nodes >= system.spaces.n_pressure)):
            raise AssemblyError("pinned pressure node outside the pressure space")
    return replace(system, constraint=constraint)


def saddle_matrix(system: SaddleSystem) -> Tuple[sparse.csr_matrix, np.ndarray]:
    """Global matrix and right-hand side with all constraints applied."""
    nv, npr = system.shape
    velocity_block = system.velocity_operator if system.velocity_operator is not None else system.K
    coupling = system.C + system.Pv
    if system.continuity_extra is not None:
        coupling = coupling + system.continuity_extra
    M = sparse.bmat([[velocity_block, -system.C.T], [-coupling, -system.S]], format="csr")
    b = np.concatenate([system.rhs_u, -system.rhs_p])

    fixed_dofs = [] if system.prescribed is None else [system.prescribed.dofs]
    fixed_vals = [] if system.prescribed is None else [system.prescribed.values]
    if system.constraint.kind == "pin_at_nodes":
        nodes = np.asarray(system.constraint.nodes, dtype=int)
        fixed_dofs.append(nv + nodes)
        fixed_vals.append(np.full(len(nodes), system.constraint.value))
    if fixed_dofs:
        dofs = np.concatenate(fixed_dofs)
        lifted = np.zeros(nv + npr)
        lifted[dofs] = np.concatenate(fixed_vals)
        mask = np.zeros(nv + npr, dtype=bool)
        mask[dofs] = True
        b = b - M @ lifted
        b[mask] = lifted[mask]
        keep = sparse.diags((~mask).astype(float))
        M = (keep @ M @ keep + sparse.diags(mask.astype(float))).tocsr()

    if system.constraint.kind == "zero_weighted_mean":
        column = sparse.csr_matrix(np.concatenate([np.zeros(nv), system.mean])[:, None])
        M = sparse.bmat([[M, column], [column.T, None]], format="csr")
        b = np.append(b, 0.0)
    return M, b


def solve_saddle_system(system: SaddleSystem, solver: Optional[str] = None, time: float = 0.0) -> FlowState:
    """Solve the constrained system; falls back to the other solver on failure.

    Raises:
        SingularSystem: The factorization found the system singular.
        LinearSolveFailure: Neither solver met the residual contract.
    """
    M, b = saddle_matrix(system)
    primary = get_linear_solver(solver)
    try:
        z = primary.solve(M, b)
    except (LinearSolveFailure, MemoryError) as e:
        fallback = get_linear_solver("iterative" if primary.name == "direct" else "direct")
        logger.warning(f"{primary.name} 求解失败 ({e})，改用 {fallback.name} 求解器")
        z = fallback.solve(M, b)
    return FlowState.from_vector(z, system.spaces, time)


def prepare_system(system: SaddleSystem, problem: FlowProblem, prescription: DirichletPrescription) -> SaddleSystem:
    return apply_pressure_constraint(apply_dirichlet(system, prescription), problem.pressure_constraint)


# ---------------------------------------------------------------------------
# nonlinear and time-dependent solves
# ---------------------------------------------------------------------------
def _increment(new: FlowState, old: FlowState) -> float:
    norm = np.linalg.norm(new.velocity)
    diff = np.linalg.norm(new.velocity - old.velocity)
    return float(diff / norm) if norm > 0 else float(diff)


def picard_solve(problem: FlowProblem, spaces: FlowSpaces, levelset: LevelSetField, tol: float, max_iter: int,
                 options: Optional[AssemblyOptions] = None, initial: Optional[FlowState] = None,
                 relaxation: float = 1.0, solver: Optional[str] = None) -> Tuple[FlowState, List[float]]:
    """Stationary Navier-Stokes by fixed-point iteration on the advection velocity.

    Returns:
        The converged state and the history of relative velocity increments.

    Raises:
        NonConvergence: ``max_iter`` reached (carries the last state and history).
    """
    state = initial if initial is not None else FlowState.zeros(spaces)
    history: List[float] = []
    if tol <= 0:
        raise AssemblyError(f"Picard tolerance {tol} must be positive")
    if max_iter < 1:
        raise NonConvergence(f"max_iter = {max_iter}: no Picard iteration allowed", state=state, history=history)
    if not 0.0 < relaxation <= 1.0:
        raise AssemblyError(f"relaxation {relaxation} must lie in (0, 1]")

    options = options or AssemblyOptions()
    base = assemble_base(problem, spaces, levelset, options, state.time)
    prescription = dirichlet_prescriptions(problem, spaces, state.time)
    for iteration in range(1, max_iter + 1):
        system = assemble_ns_picard_step(problem, spaces, levelset, state, options, base) if problem.nonlinear else base
        if problem.stabilization == "pspg":
            system = add_pspg(system, problem, spaces, levelset, state, "stationary", options)
        new = solve_saddle_system(prepare_system(system, problem, prescription), solver, state.time)
        if relaxation < 1.0 and iteration > 1:
            new = FlowState(relaxation * new.velocity + (1.0 - relaxation) * state.velocity,
                            relaxation * new.pressure + (1.0 - relaxation) * state.pressure, new.time)
        history.append(_increment(new, state))
        state = new
        logger.debug(f"Picard 迭代 {iteration}: 相对增量 {history[-1]:.3e}")
        if not problem.nonlinear or history[-1] <= tol:
            logger.info(f"Picard 迭代在第 {iteration} 步收敛")
            return state, history
    raise NonConvergence(f"Picard iteration did not reach tol={tol} in {max_iter} iterations",
                         state=state, history=history)


def crank_nicolson_advance(problem: FlowProblem, spaces: FlowSpaces, levelset: LevelSetField, state: FlowState,
                           dt: float, picard_tol: float, max_iter: int = 50,
                           options: Optional[AssemblyOptions] = None, base: Optional[SaddleSystem] = None,
                           solver: Optional[str] = None) -> FlowState:
    """One trapezoidal step ``t -> t + dt``.

    ``(T/dt + K(u)/2) u - C^T p = T u^n/dt - K(u^n) u^n/2 + f`` with the
    continuity rows taken at the new time level; the advection velocity is
    iterated to ``picard_tol`` within the step.

    Raises:
        PicardDivergence: The inner iteration did not converge.
    """
    if dt <= 0:
        raise AssemblyError(f"time step dt = {dt} must be positive")
    options = options or AssemblyOptions()
    base = base if base is not None else assemble_base(problem, spaces, levelset, options, state.time)
    t_new = state.time + dt
    u_old = state.velocity.ravel()

    if problem.steady_force:
        load = base.rhs_u
    else:
        load = 0.5 * (assemble_load(problem, spaces, levelset, state.time, options)
                      + assemble_load(problem, spaces, levelset, t_new, options))
    K_old = base.D + base.G + assemble_advection(problem, spaces, levelset, state, options)
    rhs_u = base.T @ u_old / dt - 0.5 * (K_old @ u_old) + load
    prescription = dirichlet_prescriptions(problem, spaces, t_new)

    iterate = replace(state, time=t_new)
    history: List[float] = []
    iterations = max_iter if (problem.nonlinear or problem.stabilization == "pspg") else 1
    for iteration in range(1, iterations + 1):
        A = assemble_advection(problem, spaces, levelset, iterate, options)
        velocity_block = (base.T / dt + 0.5 * (base.D + base.G + A)).tocsr()
        system = replace(base, A=A, velocity_operator=velocity_block, rhs_u=rhs_u)
        if problem.stabilization == "pspg":
            system = add_pspg(system, problem, spaces, levelset, iterate, "instationary", options, dt)
            system = replace(system, continuity_extra=(system.Pm / dt).tocsr(),
                             rhs_p=system.rhs_p + system.Pm @ u_old / dt)
        new = solve_saddle_system(prepare_system(system, problem, prescription), solver, t_new)
        history.append(_increment(new, iterate))
        iterate = new
        if iterations == 1 or history[-1] <= picard_tol:
            logger.debug(f"CN 步 t={t_new:.6g}: {iteration} 次 Picard 迭代")
            return iterate
    raise PicardDivergence(f"Picard sub-iteration at t={t_new:.6g} did not reach tol={picard_tol}",
                           time=t_new, history=history)
