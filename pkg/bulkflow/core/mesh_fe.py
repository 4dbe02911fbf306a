"""
Hexahedral meshes and tensor-product Lagrange spaces.

Reference element is [-1, 1]^3. Local node/DOF numbering is lexicographic
with the first reference direction fastest: ``l = i + (q_a+1)*(j + (q_b+1)*k)``.
Local faces are numbered ``0:-xi 1:+xi 2:-eta 3:+eta 4:-zeta 5:+zeta``.
"""

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from bulkflow.core.errors import (
    InconsistentOrientation,
    InvalidDivisions,
    InvertedElement,
    PointLocationError,
    SingularJacobian,
    UntaggedFace,
)

Orders = Tuple[int, int, int]
FACE_AXES = (0, 0, 1, 1, 2, 2)
FACE_SIGNS = (-1.0, 1.0, -1.0, 1.0, -1.0, 1.0)
JACOBIAN_FLOOR = 1e-14


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def n_points(self) -> int:
        return len(self.weights)


def _gauss_points(degree: int) -> Tuple[np.ndarray, np.ndarray]:
    if degree < 0:
        raise ValueError(f"quadrature degree must be nonnegative, got {degree}")
    return np.polynomial.legendre.leggauss(degree // 2 + 1)


@lru_cache(maxsize=None)
def quadrature(degree: int) -> QuadratureRule:
    """Tensor Gauss-Legendre rule on [-1,1]^3 exact for degree ``degree`` per direction."""
    x, w = _gauss_points(degree)
    zz, yy, xx = np.meshgrid(x, x, x, indexing="ij")
    wz, wy, wx = np.meshgrid(w, w, w, indexing="ij")
    points = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)
    return QuadratureRule(points, (wx * wy * wz).ravel(), degree)


@lru_cache(maxsize=None)
def face_quadrature(degree: int) -> QuadratureRule:
    """Tensor Gauss-Legendre rule on [-1,1]^2."""
    x, w = _gauss_points(degree)
    yy, xx = np.meshgrid(x, x, indexing="ij")
    wy, wx = np.meshgrid(w, w, indexing="ij")
    return QuadratureRule(np.stack([xx.ravel(), yy.ravel()], axis=1), (wx * wy).ravel(), degree)


def default_quadrature_degree(q_geom: int, q_u: int) -> int:
    return q_geom + q_u + 1


# ---------------------------------------------------------------------------
# Lagrange bases
# ---------------------------------------------------------------------------
class LagrangeBasis1D:
    """Equispaced Lagrange polynomials on [-1, 1] with derivatives up to order two."""

    def __init__(self, order: int):
        if order < 1:
            raise ValueError(f"Lagrange order must be at least 1, got {order}")
        self.order = order
        self.nodes = np.linspace(-1.0, 1.0, order + 1)
        self._coefficients = []
        for i, xi in enumerate(self.nodes):
            poly = npoly.polyfromroots(np.delete(self.nodes, i))
            poly = poly / npoly.polyval(xi, poly)
            self._coefficients.append([poly, npoly.polyder(poly, 1), npoly.polyder(poly, 2)])

    def tabulate(self, x: np.ndarray, derivative: int = 0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.stack([npoly.polyval(x, c[derivative]) for c in self._coefficients], axis=-1)


class TensorBasis:
    """Tensor-product Lagrange basis with per-direction orders."""

    def __init__(self, orders: Orders):
        self.orders = tuple(int(q) for q in orders)
        self.lines = [LagrangeBasis1D(q) for q in self.orders]
        qa, qb, qc = self.orders
        self.n_local = (qa + 1) * (qb + 1) * (qc + 1)
        k, j, i = np.meshgrid(np.arange(qc + 1), np.arange(qb + 1), np.arange(qa + 1), indexing="ij")
        self.lattice_index = np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1)
        self.lattice = np.stack(
            [self.lines[d].nodes[self.lattice_index[:, d]] for d in range(3)], axis=1
        )

    def local_index(self, i: int, j: int, k: int) -> int:
        qa, qb, _ = self.orders
        return i + (qa + 1) * (j + (qb + 1) * k)

    def face_indices(self, face: int) -> np.ndarray:
        axis = FACE_AXES[face]
        end = 0 if FACE_SIGNS[face] < 0 else self.orders[axis]
        return np.nonzero(self.lattice_index[:, axis] == end)[0]

    def corner_indices(self) -> np.ndarray:
        qa, qb, qc = self.orders
        return np.array([self.local_index(i, j, k) for k in (0, qc) for j in (0, qb) for i in (0, qa)])

    def face_corner_indices(self, face: int) -> np.ndarray:
        corners = self.corner_indices()
        on_face = set(self.face_indices(face).tolist())
        return np.array([c for c in corners if c in on_face])

    def tabulate(self, points: np.ndarray, hessians: bool = False):
        """Values ``(n, nl)``, reference gradients ``(n, nl, 3)`` and optionally Hessians ``(n, nl, 3, 3)``."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        tables = [[self.lines[d].tabulate(points[:, d], r) for r in range(3 if hessians else 2)] for d in range(3)]

        def product(da: int, db: int, dc: int) -> np.ndarray:
            block = np.einsum("pk,pj,pi->pkji", tables[2][dc], tables[1][db], tables[0][da])
            return block.reshape(len(points), self.n_local)

        values = product(0, 0, 0)
        grads = np.stack([product(1, 0, 0), product(0, 1, 0), product(0, 0, 1)], axis=-1)
        if not hessians:
            return values, grads, None
        hess = np.empty(values.shape + (3, 3))
        for a in range(3):
            for b in range(a, 3):
                order = [0, 0, 0]
                order[a] += 1
                order[b] += 1
                hess[..., a, b] = hess[..., b, a] = product(*order)
        return values, grads, hess


@lru_cache(maxsize=None)
def tensor_basis(orders: Orders) -> TensorBasis:
    return TensorBasis(tuple(orders))


# ---------------------------------------------------------------------------
# mesh
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class BoundaryFaces:
    """Tagged boundary faces given by (element, local face) pairs."""

    elements: np.ndarray
    local_faces: np.ndarray
    tags: np.ndarray

    def __len__(self) -> int:
        return len(self.elements)

    def select(self, tags: Union[str, Iterable[str]]) -> "BoundaryFaces":
        wanted = {tags} if isinstance(tags, str) else set(tags)
        mask = np.isin(self.tags, list(wanted))
        return BoundaryFaces(self.elements[mask], self.local_faces[mask], self.tags[mask])

    def tag_set(self) -> set:
        return set(self.tags.tolist())


@dataclass(frozen=True)
class HexMesh:
    """Hexahedral mesh of geometry order ``q_geom``.

    ``param_coords`` keeps the pre-mapping (flat or parametric) coordinates of
    every element node, so periodic seams stay unambiguous.
    """

    nodes: np.ndarray
    elements: np.ndarray
    q_geom: int
    param_coords: np.ndarray
    element_size: np.ndarray
    boundary: Optional[BoundaryFaces] = None
    label: str = ""

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def geometry_basis(self) -> TensorBasis:
        return tensor_basis((self.q_geom,) * 3)

    def element_coordinates(self, element_ids=None) -> np.ndarray:
        ids = slice(None) if element_ids is None else element_ids
        return self.nodes[self.elements[ids]]

    def with_boundary(self, boundary: BoundaryFaces) -> "HexMesh":
        return replace(self, boundary=boundary)


def element_edge_lengths(nodes: np.ndarray, elements: np.ndarray, q_geom: int) -> np.ndarray:
    """Polyline lengths of the 12 edges of every element, shape ``(E, 12)``."""
    basis = tensor_basis((q_geom,) * 3)
    coords = nodes[elements]
    lengths = []
    line = np.arange(q_geom + 1)
    for axis in range(3):
        others = [d for d in range(3) if d != axis]
        for e1 in (0, q_geom):
            for e2 in (0, q_geom):
                ijk = np.zeros((q_geom + 1, 3), dtype=int)
                ijk[:, axis] = line
                ijk[:, others[0]] = e1
                ijk[:, others[1]] = e2
                idx = [basis.local_index(*row) for row in ijk]
                seg = np.diff(coords[:, idx, :], axis=1)
                lengths.append(np.linalg.norm(seg, axis=-1).sum(axis=1))
    return np.stack(lengths, axis=1)


def finalize_mesh(nodes, elements, q_geom, param_coords, label="") -> HexMesh:
    size = element_edge_lengths(nodes, elements, q_geom).min(axis=1)
    mesh = HexMesh(np.asarray(nodes, float), np.asarray(elements, int), q_geom,
                   np.asarray(param_coords, float), size, label=label)
    check_jacobians(mesh)
    return mesh


def build_structured_hex_mesh(box, divisions: Sequence[int], q_geom: int) -> HexMesh:
    """Axis-aligned box ``((a0, a1), (b0, b1), (c0, c1))`` split into ``divisions`` elements."""
    divisions = tuple(int(d) for d in divisions)
    if len(divisions) != 3 or min(divisions) < 1 or int(q_geom) < 1:
        raise InvalidDivisions(f"divisions {divisions} and q_geom {q_geom} must be positive")
    q = int(q_geom)
    box = np.asarray(box, dtype=float)
    axes = [np.linspace(box[d, 0], box[d, 1], divisions[d] * q + 1) for d in range(3)]
    na, nb, _ = (len(a) for a in axes)
    zz, yy, xx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    nodes = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)

    basis = tensor_basis((q,) * 3)
    li = basis.lattice_index
    ec, eb, ea = np.meshgrid(*(np.arange(d) for d in divisions[::-1]), indexing="ij")
    start = np.stack([ea.ravel(), eb.ravel(), ec.ravel()], axis=1) * q
    gi = start[:, None, :] + li[None, :, :]
    elements = gi[..., 0] + na * (gi[..., 1] + nb * gi[..., 2])
    return finalize_mesh(nodes, elements, q, nodes[elements], label="structured")


def apply_geometry_mapping(mesh: HexMesh, mapping: Callable[[np.ndarray], np.ndarray]) -> HexMesh:
    """Move every node through ``mapping`` (vectorized over ``(N, 3)``)."""
    mapped = np.asarray(mapping(mesh.nodes), dtype=float).reshape(mesh.nodes.shape)
    size = element_edge_lengths(mapped, mesh.elements, mesh.q_geom).min(axis=1)
    moved = replace(mesh, nodes=mapped, element_size=size)
    check_jacobians(moved)
    return moved


# ---------------------------------------------------------------------------
# geometry and basis evaluation
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ElementGeometry:
    """Geometry map evaluated at reference points of a batch of elements.

    Shapes: ``x (E, q, 3)``, ``jac/inv_jac (E, q, 3, 3)`` with
    ``jac[..., i, j] = d x_i / d xi_j``, ``det (E, q)``, and
    ``second (E, q, 3, 3, 3)`` with ``second[..., l, j, k] = d^2 x_l / d xi_j d xi_k``.
    """

    element_ids: np.ndarray
    ref_points: np.ndarray
    paired: bool
    x: np.ndarray
    jac: np.ndarray
    det: np.ndarray
    inv_jac: np.ndarray
    second: Optional[np.ndarray]


def _tabulate_for(basis: TensorBasis, n_elements: int, ref_points: np.ndarray, paired: bool, hessians: bool):
    values, grads, hess = basis.tabulate(ref_points, hessians)
    if paired:
        shaped = (values[:, None], grads[:, None], None if hess is None else hess[:, None])
    else:
        shaped = tuple(
            None if a is None else np.broadcast_to(a, (n_elements,) + a.shape) for a in (values, grads, hess)
        )
    return shaped


def element_geometry(mesh: HexMesh, element_ids, ref_points: np.ndarray, paired: bool = False,
                     second: bool = False) -> ElementGeometry:
    """Evaluate the geometry map.

    Args:
        mesh: The mesh.
        element_ids: Element indices ``(E,)``.
        ref_points: Shared reference points ``(q, 3)``, or with ``paired``
            one point per element ``(E, 3)``.
        paired: See ``ref_points``.
        second: Also compute second derivatives of the map.

    Raises:
        SingularJacobian: When a Jacobian determinant vanishes.
    """
    element_ids = np.atleast_1d(np.asarray(element_ids, dtype=int))
    ref_points = np.atleast_2d(np.asarray(ref_points, dtype=float))
    X = mesh.nodes[mesh.elements[element_ids]]
    values, grads, hess = _tabulate_for(mesh.geometry_basis, len(element_ids), ref_points, paired, second)
    x = np.einsum("eqn,end->eqd", values, X)
    jac = np.einsum("eqnj,eni->eqij", grads, X)
    det = np.linalg.det(jac)
    scale = np.max(np.abs(jac), axis=(-2, -1)) ** 3
    if np.any(np.abs(det) <= JACOBIAN_FLOOR * np.maximum(scale, 1e-300)):
        raise SingularJacobian("vanishing Jacobian determinant in mapped element")
    inv_jac = np.linalg.inv(jac)
    sec = np.einsum("eqnjk,enl->eqljk", hess, X) if second else None
    return ElementGeometry(element_ids, ref_points, paired, x, jac, det, inv_jac, sec)


@dataclass(frozen=True)
class BasisValues:
    """Basis values ``(E, q, nl)``, physical gradients ``(E, q, nl, 3)`` and Hessians ``(E, q, nl, 3, 3)``."""

    values: np.ndarray
    grads: np.ndarray
    hess: Optional[np.ndarray] = None


def physical_basis(basis: TensorBasis, geometry: ElementGeometry, hessians: bool = False) -> BasisValues:
    if hessians and geometry.second is None:
        raise SingularJacobian("physical Hessians need the second derivatives of the geometry map")
    values, ref_grads, ref_hess = _tabulate_for(
        basis, len(geometry.element_ids), geometry.ref_points, geometry.paired, hessians
    )
    inv = geometry.inv_jac
    grads = np.einsum("eqnj,eqji->eqni", ref_grads, inv)
    hess = None
    if hessians:
        corrected = ref_hess - np.einsum("eqnl,eqljk->eqnjk", grads, geometry.second)
        hess = np.einsum("eqji,eqnjk,eqkm->eqnim", inv, corrected, inv)
    return BasisValues(np.array(values), grads, hess)


def check_jacobians(mesh: HexMesh, degree: Optional[int] = None, chunk: int = 4096) -> None:
    """Raise InvertedElement unless det J > 0 at every quadrature point."""
    rule = quadrature(degree if degree is not None else 2 * mesh.q_geom + 1)
    points = np.vstack([rule.points, mesh.geometry_basis.lattice])
    _, grads, _ = mesh.geometry_basis.tabulate(points)
    for start in range(0, mesh.n_elements, chunk):
        ids = np.arange(start, min(start + chunk, mesh.n_elements))
        X = mesh.nodes[mesh.elements[ids]]
        det = np.linalg.det(np.einsum("qnj,eni->eqij", grads, X))
        if not np.all(det > 0):
            bad = ids[np.nonzero(~np.all(det > 0, axis=1))[0]]
            raise InvertedElement(f"{len(bad)} element(s) with nonpositive Jacobian, first {int(bad[0])}")


# ---------------------------------------------------------------------------
# function spaces
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class FunctionSpace:
    """Continuous Lagrange space on ``mesh`` with per-direction orders."""

    mesh: HexMesh = field(repr=False)
    orders: Orders
    dof_map: np.ndarray
    n_dofs: int
    dof_coords: np.ndarray
    dof_param_coords: np.ndarray

    @property
    def basis(self) -> TensorBasis:
        return tensor_basis(self.orders)

    @property
    def is_isotropic(self) -> bool:
        return len(set(self.orders)) == 1


def merge_coincident_points(points: np.ndarray, tol: float) -> Tuple[np.ndarray, int]:
    """Label points closer than ``tol`` with a shared id, numbered by first occurrence."""
    tree = cKDTree(points)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    n = len(points)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)) if len(pairs) else coo_matrix((n, n))
    _, components = connected_components(graph, directed=False)
    _, first, inverse = np.unique(components, return_index=True, return_inverse=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return rank[inverse.ravel()], len(order)


def merge_tolerance(mesh: HexMesh) -> float:
    return 1e-7 * float(np.min(mesh.element_size))


def build_dof_map(mesh: HexMesh, orders) -> FunctionSpace:
    """Number the DOFs of a C0 space; coincident lattice points share one DOF.

    Raises:
        InconsistentOrientation: When neighbouring elements disagree on the
            DOF layout of a shared face (anisotropic orders on misaligned axes).
    """
    orders = tuple(int(q) for q in (orders if np.ndim(orders) else (orders,) * 3))
    if len(orders) != 3 or min(orders) < 1:
        raise InvalidDivisions(f"orders {orders} must be three positive integers")
    basis = tensor_basis(orders)
    all_ids = np.arange(mesh.n_elements)
    geo = mesh.geometry_basis
    values, _, _ = geo.tabulate(basis.lattice)
    param = np.einsum("qn,end->eqd", values, mesh.param_coords)

    if orders == (mesh.q_geom,) * 3:
        dof_map = mesh.elements.copy()
        n_dofs = mesh.n_nodes
    else:
        coords = np.einsum("qn,end->eqd", values, mesh.nodes[mesh.elements[all_ids]])
        labels, n_dofs = merge_coincident_points(coords.reshape(-1, 3), merge_tolerance(mesh))
        dof_map = labels.reshape(mesh.n_elements, basis.n_local)

    _check_face_consistency(mesh, basis, dof_map)
    dof_coords = np.empty((n_dofs, 3))
    dof_param = np.empty((n_dofs, 3))
    physical = np.einsum("qn,end->eqd", values, mesh.nodes[mesh.elements])
    dof_coords[dof_map.ravel()] = physical.reshape(-1, 3)
    dof_param[dof_map.ravel()[::-1]] = param.reshape(-1, 3)[::-1]
    return FunctionSpace(mesh, orders, dof_map, int(n_dofs), dof_coords, dof_param)


def _face_keys(mesh: HexMesh) -> np.ndarray:
    geo = mesh.geometry_basis
    keys = np.stack([np.sort(mesh.elements[:, geo.face_corner_indices(f)], axis=1) for f in range(6)], axis=1)
    return keys


def _check_face_consistency(mesh: HexMesh, basis: TensorBasis, dof_map: np.ndarray) -> None:
    if len(set(basis.orders)) == 1:
        return
    keys = _face_keys(mesh)
    seen: Dict[tuple, tuple] = {}
    for f in range(6):
        local = basis.face_indices(f)
        face_dofs = np.sort(dof_map[:, local], axis=1)
        for e in range(mesh.n_elements):
            key = tuple(keys[e, f])
            dofs = tuple(face_dofs[e])
            other = seen.setdefault(key, dofs)
            if other != dofs:
                raise InconsistentOrientation(
                    f"element {e} face {f}: anisotropic orders {basis.orders} do not match the neighbour's layout"
                )


def basis_eval(space: FunctionSpace, mesh: HexMesh, element_id: int, ref_point) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Values, physical gradients and physical Hessians of all local basis functions at one point."""
    geometry = element_geometry(mesh, [element_id], np.asarray(ref_point, float).reshape(1, 3), paired=True, second=True)
    result = physical_basis(space.basis, geometry, hessians=True)
    return result.values[0, 0], result.grads[0, 0], result.hess[0, 0]


def interpolate_nodal_field(mesh: HexMesh, nodal_values: np.ndarray, element_ids, ref_points):
    """Value, gradient and Hessian of a geometry-order nodal field at paired points."""
    geometry = element_geometry(mesh, element_ids, ref_points, paired=True, second=True)
    basis = physical_basis(mesh.geometry_basis, geometry, hessians=True)
    coeffs = nodal_values[mesh.elements[geometry.element_ids]]
    value = np.einsum("eqn,en->eq", basis.values, coeffs)[:, 0]
    grad = np.einsum("eqni,en->eqi", basis.grads, coeffs)[:, 0]
    hess = np.einsum("eqnij,en->eqij", basis.hess, coeffs)[:, 0]
    return value, grad, hess


# ---------------------------------------------------------------------------
# boundary faces
# ---------------------------------------------------------------------------
Tagger = Union[Dict[str, Callable[[np.ndarray], bool]], Sequence[Tuple[str, Callable[[np.ndarray], bool]]]]


def boundary_face_pairs(mesh: HexMesh) -> Tuple[np.ndarray, np.ndarray]:
    """(element, local face) pairs of faces that belong to exactly one element."""
    keys = _face_keys(mesh).reshape(-1, 4)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    single = np.nonzero(counts[inverse.ravel()] == 1)[0]
    return single // 6, single % 6


def extract_boundary_faces(mesh: HexMesh, tagger: Tagger) -> HexMesh:
    """Tag every boundary face; the first matching predicate wins.

    Predicates receive the face centroid in parameter (pre-mapping) coordinates.

    Raises:
        UntaggedFace: When a boundary face matches no predicate.
    """
    items = list(tagger.items()) if isinstance(tagger, dict) else list(tagger)
    elements, faces = boundary_face_pairs(mesh)
    geo = mesh.geometry_basis
    tags = []
    for e, f in zip(elements, faces):
        centroid = mesh.param_coords[e, geo.face_indices(f)].mean(axis=0)
        for tag, predicate in items:
            if predicate(centroid):
                tags.append(tag)
                break
        else:
            raise UntaggedFace(f"boundary face {f} of element {e} at {np.round(centroid, 6).tolist()} has no tag")
    return mesh.with_boundary(BoundaryFaces(elements, faces, np.array(tags, dtype=object)))


@dataclass(frozen=True)
class FaceQuadrature:
    """Quadrature on boundary faces; arrays are ``(F, q, ...)``."""

    elements: np.ndarray
    ref_points: np.ndarray
    x: np.ndarray
    param_x: np.ndarray
    m: np.ndarray
    weights: np.ndarray
    tags: np.ndarray


def face_reference_points(face: int, rule2d: QuadratureRule) -> np.ndarray:
    axis = FACE_AXES[face]
    others = [d for d in range(3) if d != axis]
    points = np.empty((rule2d.n_points, 3))
    points[:, axis] = FACE_SIGNS[face]
    points[:, others[0]] = rule2d.points[:, 0]
    points[:, others[1]] = rule2d.points[:, 1]
    return points


def face_quadrature_data(mesh: HexMesh, faces: BoundaryFaces, degree: int) -> FaceQuadrature:
    """Physical points, outward unit normals ``m`` and area weights on ``faces``."""
    rule = face_quadrature(degree)
    nq = rule.n_points
    F = len(faces)
    ref = np.empty((F, nq, 3))
    x = np.empty((F, nq, 3))
    px = np.empty((F, nq, 3))
    m = np.empty((F, nq, 3))
    w = np.empty((F, nq))
    for f in range(6):
        sel = np.nonzero(faces.local_faces == f)[0]
        if len(sel) == 0:
            continue
        pts = face_reference_points(f, rule)
        geometry = element_geometry(mesh, faces.elements[sel], pts)
        # Nanson: outward normal direction is J^{-T} e_axis
        v = FACE_SIGNS[f] * geometry.inv_jac[:, :, FACE_AXES[f], :]
        length = np.linalg.norm(v, axis=-1)
        ref[sel] = pts
        x[sel] = geometry.x
        m[sel] = v / length[..., None]
        w[sel] = np.abs(geometry.det) * length * rule.weights
        values, _, _ = mesh.geometry_basis.tabulate(pts)
        px[sel] = np.einsum("qn,end->eqd", values, mesh.param_coords[faces.elements[sel]])
    return FaceQuadrature(faces.elements, ref, x, px, m, w, faces.tags)


# ---------------------------------------------------------------------------
# point location
# ---------------------------------------------------------------------------
def _map_points(mesh: HexMesh, element_ids: np.ndarray, xi: np.ndarray):
    values, grads, _ = mesh.geometry_basis.tabulate(xi)
    X = mesh.nodes[mesh.elements[element_ids]]
    return np.einsum("pn,pnd->pd", values, X), np.einsum("pnj,pni->pij", grads, X)


def _newton_inverse(mesh: HexMesh, element_ids: np.ndarray, targets: np.ndarray, iterations: int = 30):
    xi = np.zeros_like(targets)
    for _ in range(iterations):
        x, jac = _map_points(mesh, element_ids, xi)
        singular = np.abs(np.linalg.det(jac)) <= JACOBIAN_FLOOR * np.max(np.abs(jac), axis=(1, 2)) ** 3
        jac[singular] = np.eye(3)
        step = np.linalg.solve(jac, (x - targets)[..., None])[..., 0]
        step[singular] = 0.0
        xi = np.clip(xi - step, -1.5, 1.5)
        if np.max(np.abs(step), initial=0.0) < 1e-14:
            break
    return xi


def locate_points(mesh: HexMesh, points: np.ndarray, candidates: int = 12,
                  outside_tol: float = 1e-3) -> Tuple[np.ndarray, np.ndarray]:
    """Find the containing element and reference coordinates of physical points.

    Points slightly outside the discrete domain (curved-boundary approximation)
    are accepted when their reference coordinates exceed the element by at
    most ``outside_tol``.

    Raises:
        PointLocationError: When a point lies in no element.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    centroids = mesh.element_coordinates().mean(axis=1)
    k = min(candidates, mesh.n_elements)
    _, near = cKDTree(centroids).query(points, k=k)
    near = near.reshape(len(points), k)
    best_excess = np.full(len(points), np.inf)
    best_elem = np.zeros(len(points), dtype=int)
    best_xi = np.zeros((len(points), 3))
    for rank in range(k):
        open_ = np.nonzero(best_excess > 1e-10)[0]
        if len(open_) == 0:
            break
        elems = near[open_, rank]
        xi = _newton_inverse(mesh, elems, points[open_])
        mapped, _ = _map_points(mesh, elems, xi)
        hit = np.linalg.norm(mapped - points[open_], axis=1) <= 1e-9 * (1.0 + np.linalg.norm(points[open_], axis=1))
        excess = np.where(hit, np.maximum(np.max(np.abs(xi), axis=1) - 1.0, 0.0), np.inf)
        better = excess < best_excess[open_]
        idx = open_[better]
        best_excess[idx] = excess[better]
        best_elem[idx] = elems[better]
        best_xi[idx] = xi[better]
    if np.any(best_excess > outside_tol):
        bad = int(np.argmax(best_excess))
        raise PointLocationError(f"point {points[bad].tolist()} lies outside the mesh")
    return best_elem, best_xi
