"""
Benchmark cases: geometry, level set, boundary data, material parameters,
exact solutions and probes.

Closed-form maps and fields are written once in sympy and compiled with
``lambdify``; derivatives (mapping Jacobians, level-set Hessians, velocity
gradients) come from the same expressions.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import sympy as sp

from bulkflow.core.block_meshes import box_block, build_block_mesh, cylinder_channel_blocks
from bulkflow.core.errors import ConfigError
from bulkflow.core.flow_assembly import (
    DirichletCondition,
    FlowProblem,
    FlowSpaces,
    FlowState,
    NeumannCondition,
    PressureConstraint,
    build_flow_spaces,
)
from bulkflow.core.levelset_geometry import LevelSetField, boundary_frame, frames_from_derivatives
from bulkflow.core.mesh_fe import (
    HexMesh,
    apply_geometry_mapping,
    build_structured_hex_mesh,
    element_geometry,
    extract_boundary_faces,
    locate_points,
)
from bulkflow.core.tdc_ops import PointGradients, strain_and_stress, stress_divergence
from bulkflow.core.verify import ExactSolution, SurfaceProbe
from utils import logger

X, Y, Z = sp.symbols("x y z", real=True)
A, B, C = sp.symbols("a b c", real=True)
EDGE_TOL = 1e-9

# obstacle channel
CHANNEL_LENGTH = 2.2
CHANNEL_HEIGHT = 0.41
CHANNEL_DEPTH = 1.0 / 3.0
OBSTACLE_CENTER = (0.2, 0.2)
OBSTACLE_RADIUS = (0.05, 0.06)
INFLOW_PEAK = 1.5


@dataclass(frozen=True)
class TimeConfig:
    t_start: float
    t_end: float
    dt: float

    @property
    def n_steps(self) -> int:
        return int(round((self.t_end - self.t_start) / self.dt))


@dataclass(frozen=True)
class BenchmarkCase:
    """One ready-to-solve test case.

    ``param_map`` takes parameter (flat) coordinates to physical points of the
    discrete geometry; probes and line profiles are placed through it.
    """

    name: str
    mesh: HexMesh = field(repr=False)
    levelset: LevelSetField = field(repr=False)
    problem: FlowProblem = field(repr=False)
    q_u: int = 2
    pressure_orders: Tuple[int, int, int] = (1, 1, 1)
    exact: Optional[ExactSolution] = field(default=None, repr=False)
    exact_at: Optional[Callable[[float], ExactSolution]] = field(default=None, repr=False)
    probes: Tuple[SurfaceProbe, ...] = field(default=(), repr=False)
    time: Optional[TimeConfig] = None
    initial_velocity: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)
    param_map: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)
    profiles: Dict[str, Tuple[Sequence[float], Sequence[float]]] = field(default_factory=dict, repr=False)

    def build_spaces(self, quad_degree: Optional[int] = None) -> FlowSpaces:
        return build_flow_spaces(self.mesh, self.q_u, self.pressure_orders, quad_degree)

    def exact_solution(self, t: Optional[float] = None) -> Optional[ExactSolution]:
        if self.exact_at is not None and t is not None:
            return self.exact_at(t)
        return self.exact

    def initial_state(self, spaces: FlowSpaces) -> FlowState:
        t0 = self.time.t_start if self.time is not None else 0.0
        if self.initial_velocity is None:
            return FlowState.zeros(spaces, t0)
        return FlowState.interpolate(spaces, self.initial_velocity, time=t0)


# ---------------------------------------------------------------------------
# sympy helpers
# ---------------------------------------------------------------------------
def compile_field(expr, symbols=(X, Y, Z)) -> Callable[[np.ndarray], np.ndarray]:
    """Compile a (nested) sympy expression into a function of ``(..., 3)`` points."""
    if isinstance(expr, sp.MatrixBase):
        expr = expr.tolist()
    objects = np.array(expr, dtype=object)
    shape = objects.shape
    compiled = sp.lambdify(symbols, list(objects.ravel()), modules="numpy")

    def evaluate(points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        lead = points.shape[:-1]
        values = compiled(*(points[..., i] for i in range(3)))
        out = np.stack([np.broadcast_to(np.asarray(v, dtype=float), lead) for v in values], axis=-1)
        return out.reshape(lead + shape)

    return evaluate


def analytic_levelset(phi, phi_min: float, phi_max: float, diameter: float) -> LevelSetField:
    grad = [sp.diff(phi, s) for s in (X, Y, Z)]
    hess = [[sp.diff(g, s) for s in (X, Y, Z)] for g in grad]
    norm = sp.sqrt(sum(g ** 2 for g in grad))
    kappa = sum(sp.diff(g / norm, s) for g, s in zip(grad, (X, Y, Z)))
    kappa_grad = [sp.diff(kappa, s) for s in (X, Y, Z)]
    return LevelSetField.analytic(compile_field(phi), compile_field(grad), compile_field(hess),
                                  phi_min, phi_max, diameter, compile_field(kappa_grad))


def _velocity_derivatives(u):
    grad = [[sp.diff(ui, s) for s in (X, Y, Z)] for ui in u]
    hess = [[[sp.diff(g, s) for s in (X, Y, Z)] for g in row] for row in grad]
    return compile_field(u), compile_field(grad), compile_field(hess)


def parameter_nodes(mesh: HexMesh) -> np.ndarray:
    """Parameter coordinates per geometry node (last writer wins on periodic seams)."""
    nodes = np.zeros((mesh.n_nodes, 3))
    nodes[mesh.elements.ravel()] = mesh.param_coords.reshape(-1, 3)
    return nodes


def discrete_image(mesh: HexMesh, param_points: np.ndarray) -> np.ndarray:
    """Images of parameter points under the discrete geometry map of ``mesh``."""
    flat = replace(mesh, nodes=parameter_nodes(mesh), boundary=None)
    elements, refs = locate_points(flat, np.atleast_2d(param_points))
    return element_geometry(mesh, elements, refs, paired=True).x[:, 0]


def _near(value: float) -> Callable[[float], bool]:
    return lambda v: abs(v - value) <= EDGE_TOL * max(1.0, abs(value))


def _zero_velocity(param: np.ndarray, phys: np.ndarray, t: float) -> np.ndarray:
    return np.zeros(phys.shape)


# ---------------------------------------------------------------------------
# axisymmetric Stokes flow
# ---------------------------------------------------------------------------
AXISYM_HEIGHT = 3.0
AXISYM_RADII = (0.8, 1.2)


def _axisym_expressions():
    r_xy = sp.sqrt(X ** 2 + Y ** 2)
    phi = r_xy - sp.Rational(1, 5) * sp.sin(1 + 3 * Z)
    slope = sp.Rational(3, 5) * sp.cos(1 + 3 * Z)
    r_inflow = phi + sp.Rational(1, 5) * sp.sin(1)
    scale = r_inflow / (r_xy * sp.sqrt(1 + slope ** 2))
    u = [scale * slope * X / r_xy, scale * slope * Y / r_xy, scale]
    return phi, u


def axisymmetric_map(points: np.ndarray) -> np.ndarray:
    """``(theta, z, c) -> (r cos theta, r sin theta, z)`` with ``r = c + 0.2 sin(1 + 3z)``."""
    theta, z, c = points[..., 0], points[..., 1], points[..., 2]
    r = c + 0.2 * np.sin(1.0 + 3.0 * z)
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=-1)


def make_axisymmetric_case(refine_level: int = 0, q_u: int = 2, q_geom: Optional[int] = None,
                           pressure_orders=None, mu: float = 0.1, rho: float = 1.0,
                           traction_free: bool = False, stabilization: str = "none",
                           alpha: Optional[float] = None, penalty_scale: float = 1e3) -> BenchmarkCase:
    """Stokes flow through a wavy annulus ``phi = sqrt(x^2+y^2) - 0.2 sin(1+3z)``, ``c in [0.8, 1.2]``.

    The exact field is the divergence-free co-normal transport with unit
    speed at the inflow; the body force and the outflow traction are
    manufactured from it (``traction_free`` drops the traction).
    """
    q_geom = q_geom or q_u + 1
    scale = 2 ** int(refine_level)
    divisions = (8 * scale, 6 * scale, 1 * scale)
    blocks = [box_block((0.0, 0.0, AXISYM_RADII[0]), (2 * np.pi, AXISYM_HEIGHT, AXISYM_RADII[1]), divisions, "annulus")]
    mesh = build_block_mesh(blocks, q_geom, axisymmetric_map, label=f"axisym-L{refine_level}")
    lo, hi = AXISYM_RADII
    mesh = extract_boundary_faces(mesh, [
        ("free", lambda p: _near(lo)(p[2]) or _near(hi)(p[2])),
        ("inflow", lambda p: _near(0.0)(p[1])),
        ("outflow", lambda p: _near(AXISYM_HEIGHT)(p[1])),
    ])

    phi_expr, u_expr = _axisym_expressions()
    diameter = float(np.sqrt(2 * (2 * (hi + 0.2)) ** 2 + AXISYM_HEIGHT ** 2))
    levelset = analytic_levelset(phi_expr, lo, hi, diameter)
    velocity, velocity_grad, velocity_hess = _velocity_derivatives(u_expr)

    def frame_at(x: np.ndarray):
        _, grad, hess = levelset.evaluate(x)
        return frames_from_derivatives(grad, hess, levelset.gradient_floor)

    def body_force(x: np.ndarray, t: float) -> np.ndarray:
        g = PointGradients(vector_grad=velocity_grad(x), second_derivs=velocity_hess(x))
        zeros = np.zeros(x.shape[:-1])
        return -stress_divergence(g, zeros, np.zeros(x.shape), mu, frame_at(x))

    def outflow_traction(x: np.ndarray, t: float) -> np.ndarray:
        frame = boundary_frame(frame_at(x), np.array([0.0, 0.0, 1.0]))
        g = PointGradients(vector_grad=velocity_grad(x))
        _, _, stress = strain_and_stress(g, np.zeros(x.shape[:-1]), mu, frame.P)
        return np.einsum("...ij,...j->...i", stress.sigma, frame.q)

    problem = FlowProblem(
        mu=mu, rho=rho, alpha=alpha, penalty_scale=penalty_scale, body_force=body_force,
        stabilization=stabilization,
        dirichlet=(DirichletCondition("inflow", lambda param, phys, t: velocity(phys)),),
        neumann=(NeumannCondition("outflow", None if traction_free else outflow_traction),),
        advection=False,
    )
    logger.info(f"轴对称算例: 层级 {refine_level}, {mesh.n_elements} 单元")
    return BenchmarkCase(
        name="stokes_axisym",
        mesh=mesh,
        levelset=levelset,
        problem=problem,
        q_u=q_u,
        pressure_orders=_orders(q_u, pressure_orders),
        exact=ExactSolution(velocity, velocity_grad),
        param_map=axisymmetric_map,
    )


def _orders(q_u: int, pressure_orders) -> Tuple[int, int, int]:
    if pressure_orders is None:
        return (q_u - 1,) * 3
    if np.ndim(pressure_orders) == 0:
        return (int(pressure_orders),) * 3
    return tuple(int(q) for q in pressure_orders)


# ---------------------------------------------------------------------------
# channel with obstacle
# ---------------------------------------------------------------------------
def obstacle_mapping_expressions(mapping: str):
    if mapping == "phi1":
        return [
            A + 0.1 * B + 0.2 * C + 0.1 * sp.sin(A) + 0.2 * sp.sin(B) + 0.3 * sp.sin(2 * C),
            0.1 * A + B - 0.2 * C + 0.3 * sp.sin(A) + 0.2 * sp.sin(B) + 0.1 * sp.sin(2 * C) - (C - 0.5) ** 2,
            -0.2 * A + 0.3 * B + C + 0.2 * sp.sin(A) + 0.1 * sp.sin(B) + 0.3 * sp.sin(2 * C) + 0.25 * A ** 2,
        ]
    angle = sp.Rational(1, 4) * sp.pi * A
    bend = sp.cos(sp.pi / 6 * (1 - A))
    if mapping == "phi2":
        q_bar = -0.1 * A ** 2 + 0.2 * A
        s = -(1 + q_bar) * (B - 0.205) * bend
        z = C + 0.5 * sp.sin(2 * A) + 0.2 * sp.sin(2 * B)
    elif mapping == "phi3":
        s = -(1 - 0.1 * A ** 2 + 0.2 * A) * (B - 0.205) * bend
        z = (sp.Rational(6, 11) * A + C - sp.Rational(10, 11) * A * C + sp.Rational(50, 121) * A ** 2 * C
             - sp.Rational(30, 121) * A ** 2 + 5 * (B - 0.205) ** 2 + 0.5 * sp.sin(2 * A) + 0.2 * sp.sin(2 * B))
    else:
        raise ConfigError(f"unknown obstacle mapping '{mapping}'")
    return [sp.cos(angle) * (s + 1.2), sp.sin(angle) * (s + 1.2), z]


def obstacle_mapping(mapping: str) -> Tuple[Callable, Callable]:
    """The map ``(a, b, c) -> (x, y, z)`` and its Jacobian ``d x_i / d a_j``."""
    expr = obstacle_mapping_expressions(mapping)
    jacobian = [[sp.diff(e, s) for s in (A, B, C)] for e in expr]
    return compile_field(expr, (A, B, C)), compile_field(jacobian, (A, B, C))


def obstacle_radius(c):
    r0, r1 = OBSTACLE_RADIUS
    return r0 + (r1 - r0) * np.asarray(c) / CHANNEL_DEPTH


def inflow_profile(b):
    """Parabolic profile with peak ``INFLOW_PEAK`` at mid-height."""
    return 4.0 * INFLOW_PEAK * b * (CHANNEL_HEIGHT - b) / CHANNEL_HEIGHT ** 2


def _nodal_levelset(mesh: HexMesh, phi_min: float, phi_max: float) -> LevelSetField:
    return LevelSetField.from_nodal(mesh, parameter_nodes(mesh)[:, 2], phi_min, phi_max)


def make_obstacle_case(mapping: str = "phi1", stationary: bool = True, mu: Optional[float] = None,
                       rho: float = 1.0, refine_level: int = 0, q_u: int = 2, q_geom: Optional[int] = None,
                       pressure_orders=None, stabilization: str = "none", alpha: Optional[float] = None,
                       penalty_scale: float = 1e3, dt: float = 0.01, t_end: float = 3.0,
                       allow_pspg_with_taylor_hood: bool = False) -> BenchmarkCase:
    """Channel flow past a cylinder whose radius grows through the thickness, mapped by ``phi1..phi3``.

    Level sets are the images of the slices ``c = const`` (nodal field ``phi = c``).
    """
    if mu is None:
        mu = 0.01 if stationary else (0.002 if mapping == "phi3" else 0.0015)
    q_geom = q_geom or q_u + 1
    point_map, jacobian = obstacle_mapping(mapping)
    flat = build_block_mesh(cylinder_channel_blocks(refine_level), q_geom, label=f"obstacle-{mapping}-L{refine_level}")
    mesh = apply_geometry_mapping(flat, point_map)
    cx, cy = OBSTACLE_CENTER
    mesh = extract_boundary_faces(mesh, [
        ("free", lambda p: _near(0.0)(p[2]) or _near(CHANNEL_DEPTH)(p[2])),
        ("inflow", lambda p: _near(0.0)(p[0])),
        ("outflow", lambda p: _near(CHANNEL_LENGTH)(p[0])),
        ("wall", lambda p: _near(0.0)(p[1]) or _near(CHANNEL_HEIGHT)(p[1])),
        ("obstacle", lambda p: np.hypot(p[0] - cx, p[1] - cy) < 0.08),
    ])
    levelset = _nodal_levelset(mesh, 0.0, CHANNEL_DEPTH)

    def inflow(param: np.ndarray, phys: np.ndarray, t: float) -> np.ndarray:
        # flat profile (U, 0, 0) pushed forward by the mapping Jacobian
        return inflow_profile(param[:, 1])[:, None] * jacobian(param)[:, :, 0]

    problem = FlowProblem(
        mu=mu, rho=rho, alpha=alpha, penalty_scale=penalty_scale, stabilization=stabilization,
        dirichlet=(
            DirichletCondition("inflow", inflow, priority=0),
            DirichletCondition("wall", _zero_velocity, priority=1),
            DirichletCondition("obstacle", _zero_velocity, priority=1),
        ),
        neumann=(NeumannCondition("outflow"),),
        allow_pspg_with_taylor_hood=allow_pspg_with_taylor_hood,
    )

    def param_map(points):
        return discrete_image(mesh, points)

    probes = []
    for c in (0.0, CHANNEL_DEPTH / 2, CHANNEL_DEPTH):
        r = float(obstacle_radius(c))
        front, back = param_map(np.array([[cx - r, cy, c], [cx + r, cy, c]]))
        probes.append(SurfaceProbe(c, np.zeros((0, 3)), np.zeros(0), {"front": front, "back": back},
                                   name=f"c={c:.6g}"))
    logger.info(f"绕流算例 {mapping}: {mesh.n_elements} 单元, mu={mu}")
    return BenchmarkCase(
        name="obstacle",
        mesh=mesh,
        levelset=levelset,
        problem=problem,
        q_u=q_u,
        pressure_orders=_orders(q_u, pressure_orders),
        probes=tuple(probes),
        time=None if stationary else TimeConfig(0.0, t_end, dt),
        param_map=param_map,
    )


# ---------------------------------------------------------------------------
# driven cavity
# ---------------------------------------------------------------------------
CAVITY_DEPTH = 0.125
CAVITY_AMPLITUDE = 0.4


def cavity_mapping_expressions():
    return [A, B, CAVITY_AMPLITUDE * sp.sqrt(0.1 + C) * (-1 + 8 * A + 2 * B - 8 * A ** 2) * (1 - B) + sp.sin(C)]


def lid_speed(z):
    return 1.0 - 4.0 * np.asarray(z)


def make_cavity_case(q_u: int = 2, equal_order: bool = True, refine_level: int = 0, mu: float = 0.01,
                     rho: float = 1.0, q_geom: Optional[int] = None, stabilization: Optional[str] = None,
                     alpha: Optional[float] = None, penalty_scale: float = 1e3,
                     divisions: Optional[Tuple[int, int, int]] = None,
                     allow_pspg_with_taylor_hood: bool = False) -> BenchmarkCase:
    """Lid-driven cavity on the mapped slab ``[0,1]^2 x [0, 0.125]``.

    ``equal_order`` selects ``q_p = q_u`` with PSPG, otherwise Taylor-Hood.
    The pressure is pinned at the nodes ``(0.5, 0, c)``.
    """
    if q_u < 2:
        raise ConfigError("the cavity case needs q_u >= 2")
    q_geom = q_geom or q_u + 1
    if stabilization is None:
        stabilization = "pspg" if equal_order else "none"
    scale = 2 ** int(refine_level)
    divisions = divisions or (4 * scale, 4 * scale, 2)
    if divisions[0] % 2:
        raise ConfigError("the cavity pressure pin needs an even number of divisions along a")
    point_map = compile_field(cavity_mapping_expressions(), (A, B, C))
    flat = build_structured_hex_mesh(((0.0, 1.0), (0.0, 1.0), (0.0, CAVITY_DEPTH)), divisions, q_geom)
    mesh = apply_geometry_mapping(flat, point_map)
    mesh = replace(mesh, label=f"cavity-L{refine_level}")
    mesh = extract_boundary_faces(mesh, [
        ("free", lambda p: _near(0.0)(p[2]) or _near(CAVITY_DEPTH)(p[2])),
        ("lid", lambda p: _near(1.0)(p[1])),
        ("wall", lambda p: True),
    ])
    levelset = _nodal_levelset(mesh, 0.0, CAVITY_DEPTH)

    def lid(param: np.ndarray, phys: np.ndarray, t: float) -> np.ndarray:
        out = np.zeros(phys.shape)
        out[:, 0] = lid_speed(phys[:, 2])
        return out

    pressure_orders = (q_u,) * 3 if equal_order else (q_u - 1,) * 3
    problem = FlowProblem(
        mu=mu, rho=rho, alpha=alpha, penalty_scale=penalty_scale, stabilization=stabilization,
        dirichlet=(DirichletCondition("lid", lid, priority=0), DirichletCondition("wall", _zero_velocity, priority=1)),
        pressure_constraint=PressureConstraint.pin(cavity_pin_nodes(mesh, pressure_orders)),
        allow_pspg_with_taylor_hood=allow_pspg_with_taylor_hood,
    )

    def param_map(points):
        return discrete_image(mesh, points)

    mid = CAVITY_DEPTH / 2
    return BenchmarkCase(
        name="cavity",
        mesh=mesh,
        levelset=levelset,
        problem=problem,
        q_u=q_u,
        pressure_orders=pressure_orders,
        param_map=param_map,
        profiles={
            "u_vertical": ((0.5, 0.0, mid), (0.5, 1.0, mid)),
            "v_horizontal": ((0.0, 0.5, mid), (1.0, 0.5, mid)),
        },
    )


def cavity_pin_nodes(mesh: HexMesh, pressure_orders) -> Tuple[int, ...]:
    from bulkflow.core.mesh_fe import build_dof_map

    space = build_dof_map(mesh, pressure_orders)
    param = space.dof_param_coords
    hits = np.nonzero((np.abs(param[:, 0] - 0.5) < 1e-9) & (np.abs(param[:, 1]) < 1e-9))[0]
    if len(hits) == 0:
        raise ConfigError("no pressure node on the pin line (0.5, 0, c)")
    return tuple(int(h) for h in hits)


# ---------------------------------------------------------------------------
# torus shells
# ---------------------------------------------------------------------------
TORUS_MAJOR = 2.0
TORUS_MINOR = (0.25, 0.75)
TORUS_PROBE_RADII = (0.25, 0.5, 0.75)


def torus_map(points: np.ndarray) -> np.ndarray:
    """``(theta, psi, rho)`` -> point at toroidal angle theta, poloidal angle psi, tube radius rho."""
    theta, psi, rho = points[..., 0], points[..., 1], points[..., 2]
    ring = TORUS_MAJOR + rho * np.cos(psi)
    return np.stack([ring * np.cos(theta), ring * np.sin(theta), rho * np.sin(psi)], axis=-1)


def torus_initial_velocity(x: np.ndarray) -> np.ndarray:
    x_, y_, z_ = x[..., 0], x[..., 1], x[..., 2]
    r_xy = x_ ** 2 + y_ ** 2
    return np.stack([
        -(y_ + 2 * x_ * z_) / (8 * r_xy),
        (x_ - 2 * y_ * z_) / (8 * r_xy),
        (np.sqrt(r_xy) - 2) / (4 * np.sqrt(r_xy)),
    ], axis=-1)


def make_torus_case(refine_level: int = 0, q_u: int = 2, q_geom: int = 3, pressure_orders=None,
                    mu: float = 1.0, rho: float = 1.0, dt: float = 0.1, t_end: float = 60.0,
                    stabilization: str = "none", alpha: Optional[float] = None, penalty_scale: float = 1e3,
                    probe_resolution: Tuple[int, int] = (64, 32),
                    allow_pspg_with_taylor_hood: bool = False) -> BenchmarkCase:
    """Decaying flow on nested tori ``phi = (sqrt(x^2+y^2) - 2)^2 + z^2`` with tube radii 0.25..0.75.

    The shells are closed, so the only condition is a zero weighted pressure mean.
    """
    scale = 2 ** int(refine_level)
    divisions = (8 * scale, 4 * scale, 1 * scale)
    lo, hi = TORUS_MINOR
    blocks = [box_block((0.0, 0.0, lo), (2 * np.pi, 2 * np.pi, hi), divisions, "torus")]
    mesh = build_block_mesh(blocks, q_geom, torus_map, label=f"torus-L{refine_level}")
    mesh = extract_boundary_faces(mesh, [("free", lambda p: True)])
    phi = (sp.sqrt(X ** 2 + Y ** 2) - TORUS_MAJOR) ** 2 + Z ** 2
    levelset = analytic_levelset(phi, lo ** 2, hi ** 2, 2 * (TORUS_MAJOR + hi))
    problem = FlowProblem(
        mu=mu, rho=rho, alpha=alpha, penalty_scale=penalty_scale, stabilization=stabilization,
        pressure_constraint=PressureConstraint.zero_mean(),
        allow_pspg_with_taylor_hood=allow_pspg_with_taylor_hood,
    )
    probes = []
    for r in TORUS_PROBE_RADII:
        def surface(s, t, r=r):
            return torus_map(np.stack([s, t, np.full_like(s, r)], axis=-1))

        probes.append(SurfaceProbe.from_parametrization(r ** 2, surface, (0.0, 2 * np.pi), (0.0, 2 * np.pi),
                                                        probe_resolution, (True, True), name=f"r={r:g}"))
    logger.info(f"环面算例: 层级 {refine_level}, {mesh.n_elements} 单元")
    return BenchmarkCase(
        name="torus",
        mesh=mesh,
        levelset=levelset,
        problem=problem,
        q_u=q_u,
        pressure_orders=_orders(q_u, pressure_orders),
        probes=tuple(probes),
        time=TimeConfig(0.0, t_end, dt),
        initial_velocity=torus_initial_velocity,
        param_map=torus_map,
    )


# ---------------------------------------------------------------------------
# flat slabs
# ---------------------------------------------------------------------------
SLAB_DEPTH = 0.25


def make_slab_case(kind: str = "poiseuille", refine_level: int = 0, q_u: int = 2, q_geom: Optional[int] = None,
                   pressure_orders=None, mu: float = 1.0, rho: Optional[float] = None,
                   dt: float = 0.05, t_end: float = 0.5, stabilization: str = "none",
                   alpha: Optional[float] = None, penalty_scale: float = 1e3,
                   allow_pspg_with_taylor_hood: bool = False) -> BenchmarkCase:
    """Flat level sets ``phi = z``.

    ``poiseuille``: channel ``[0,2] x [0,1]`` with the profile ``4y(1-y)`` and
    pressure ``-8 mu x`` (zero mean). ``decay``: the shear mode
    ``sin(pi y) exp(-mu pi^2 t / rho)`` on the unit square.
    """
    if kind not in ("poiseuille", "decay"):
        raise ConfigError(f"unknown slab case '{kind}'")
    q_geom = q_geom or q_u + 1
    scale = 2 ** int(refine_level)
    length = 2.0 if kind == "poiseuille" else 1.0
    divisions = (2 * scale, 2 * scale, 1) if kind == "poiseuille" else (2 * scale, 4 * scale, 1)
    mesh = build_structured_hex_mesh(((0.0, length), (0.0, 1.0), (0.0, SLAB_DEPTH)), divisions, q_geom)
    mesh = replace(mesh, label=f"{kind}-L{refine_level}")
    mesh = extract_boundary_faces(mesh, [
        ("free", lambda p: _near(0.0)(p[2]) or _near(SLAB_DEPTH)(p[2])),
        ("ends", lambda p: _near(0.0)(p[0]) or _near(length)(p[0])),
        ("wall", lambda p: True),
    ])
    levelset = analytic_levelset(Z, 0.0, SLAB_DEPTH, float(np.sqrt(length ** 2 + 1 + SLAB_DEPTH ** 2)))

    if kind == "poiseuille":
        rho = 0.0 if rho is None else rho
        u = [4 * Y * (1 - Y), sp.Integer(0), sp.Integer(0)]
        velocity = compile_field(u)
        velocity_grad = compile_field([[sp.diff(ui, s) for s in (X, Y, Z)] for ui in u])

        def pressure(x):
            p = -8.0 * mu * x[..., 0]
            return p - (-8.0 * mu * length / 2)

        problem = FlowProblem(
            mu=mu, rho=rho, alpha=alpha, penalty_scale=penalty_scale, stabilization=stabilization,
            dirichlet=(DirichletCondition("ends", lambda param, phys, t: velocity(phys)),
                       DirichletCondition("wall", _zero_velocity, priority=1)),
            pressure_constraint=PressureConstraint.zero_mean(), advection=False,
            allow_pspg_with_taylor_hood=allow_pspg_with_taylor_hood,
        )
        return BenchmarkCase(
            name="poiseuille", mesh=mesh, levelset=levelset, problem=problem, q_u=q_u,
            pressure_orders=_orders(q_u, pressure_orders), exact=ExactSolution(velocity, velocity_grad, pressure),
            param_map=lambda p: np.asarray(p, dtype=float),
        )

    rho = 1.0 if rho is None else rho
    rate = mu * np.pi ** 2 / rho

    def decay_velocity(x: np.ndarray, t: float) -> np.ndarray:
        out = np.zeros(np.shape(x))
        out[..., 0] = np.sin(np.pi * x[..., 1]) * np.exp(-rate * t)
        return out

    def decay_exact(t: float) -> ExactSolution:
        def gradient(x):
            out = np.zeros(np.shape(x) + (3,))
            out[..., 0, 1] = np.pi * np.cos(np.pi * x[..., 1]) * np.exp(-rate * t)
            return out

        return ExactSolution(lambda x: decay_velocity(x, t), gradient)

    problem = FlowProblem(
        mu=mu, rho=rho, alpha=alpha, penalty_scale=penalty_scale, stabilization=stabilization,
        dirichlet=(DirichletCondition("ends", lambda param, phys, t: decay_velocity(phys, t)),
                   DirichletCondition("wall", _zero_velocity, priority=1)),
        pressure_constraint=PressureConstraint.zero_mean(), advection=False,
        allow_pspg_with_taylor_hood=allow_pspg_with_taylor_hood,
    )
    return BenchmarkCase(
        name="decay", mesh=mesh, levelset=levelset, problem=problem, q_u=q_u,
        pressure_orders=_orders(q_u, pressure_orders), exact=decay_exact(0.0), exact_at=decay_exact,
        time=TimeConfig(0.0, t_end, dt), initial_velocity=lambda x: decay_velocity(x, 0.0),
        param_map=lambda p: np.asarray(p, dtype=float),
    )


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------
def get_case(run_config, refine_level: Optional[int] = None) -> BenchmarkCase:
    """Build the case a RunConfig names, with its numeric overrides applied."""
    level = run_config.refine_level if refine_level is None else refine_level
    common = dict(
        q_u=run_config.q_u, q_geom=run_config.q_geom, pressure_orders=run_config.pressure_orders,
        mu=run_config.mu, rho=run_config.rho, stabilization=run_config.stabilization,
        alpha=run_config.penalty_alpha, penalty_scale=run_config.penalty_scale,
        allow_pspg_with_taylor_hood=run_config.allow_pspg_with_taylor_hood,
    )
    name = run_config.case
    if name == "stokes_axisym":
        common.pop("allow_pspg_with_taylor_hood")
        return make_axisymmetric_case(level, **common)
    if name == "obstacle":
        return make_obstacle_case(run_config.mapping, run_config.stationary, refine_level=level,
                                  dt=run_config.dt, t_end=run_config.t_end, **common)
    if name == "cavity":
        common.pop("pressure_orders")
        return make_cavity_case(equal_order=run_config.pressure_regime == "equal_order", refine_level=level, **common)
    if name == "torus":
        return make_torus_case(level, dt=run_config.dt, t_end=run_config.t_end, **common)
    if name in ("poiseuille", "decay"):
        extra = dict(dt=run_config.dt, t_end=run_config.t_end) if name == "decay" else {}
        return make_slab_case(name, level, **common, **extra)
    raise ConfigError(f"unknown case '{name}'")
