import numpy as np
import pytest

from bulkflow.core.benchmarks import cavity_mapping_expressions, compile_field, obstacle_mapping, A, B, C
from bulkflow.core.errors import InvalidDivisions, InvertedElement, UntaggedFace
from bulkflow.core.mesh_fe import (
    apply_geometry_mapping,
    basis_eval,
    build_dof_map,
    build_structured_hex_mesh,
    element_geometry,
    extract_boundary_faces,
    face_quadrature_data,
    locate_points,
    quadrature,
    tensor_basis,
)

UNIT = ((0.0, 1.0), (0.0, 1.0), (0.0, 1.0))


def _all_faces(mesh):
    return extract_boundary_faces(mesh, [
        ("left", lambda p: abs(p[0]) < 1e-12),
        ("right", lambda p: abs(p[0] - 1.0) < 1e-12),
        ("rest", lambda p: True),
    ])


def test_structured_node_counts() -> None:
    assert build_structured_hex_mesh(UNIT, (1, 1, 1), 1).n_nodes == 8
    mesh = build_structured_hex_mesh(UNIT, (2, 2, 2), 2)
    assert mesh.n_nodes == 125
    assert mesh.n_elements == 8
    np.testing.assert_allclose(mesh.element_size, 0.5)


def test_invalid_divisions() -> None:
    with pytest.raises(InvalidDivisions):
        build_structured_hex_mesh(UNIT, (0, 1, 1), 1)


def test_quadrature_rules() -> None:
    rule = quadrature(1)
    assert rule.n_points == 1
    assert rule.weights.sum() == pytest.approx(8.0)
    rule = quadrature(4)
    x, y = rule.points[:, 0], rule.points[:, 1]
    assert np.sum(rule.weights * x ** 2 * y ** 2) == pytest.approx(8.0 / 9.0)


def test_dof_counts() -> None:
    mesh = build_structured_hex_mesh(((0.0, 2.0), (0.0, 1.0), (0.0, 1.0)), (2, 1, 1), 2)
    assert build_dof_map(mesh, 2).n_dofs == 45
    assert build_dof_map(mesh, 1).n_dofs == 12
    anisotropic = build_dof_map(mesh, (1, 1, 2))
    assert anisotropic.n_dofs == 3 * 2 * 3
    assert not anisotropic.is_isotropic


def test_basis_partition_of_unity_at_center() -> None:
    mesh = build_structured_hex_mesh(UNIT, (1, 1, 1), 1)
    space = build_dof_map(mesh, 1)
    values, grads, _ = basis_eval(space, mesh, 0, [0.0, 0.0, 0.0])
    np.testing.assert_allclose(values, 0.125)
    np.testing.assert_allclose(grads.sum(axis=0), 0.0, atol=1e-14)


def test_quadratic_space_reproduces_quadratics() -> None:
    mesh = build_structured_hex_mesh(((0.0, 2.0), (0.0, 1.0), (0.0, 1.0)), (2, 1, 1), 1)
    space = build_dof_map(mesh, 2)
    xs = space.dof_coords
    coeffs = xs[:, 0] ** 2 + xs[:, 1] * xs[:, 2]
    ref = np.array([0.3, -0.4, 0.7])
    x = element_geometry(mesh, [1], ref.reshape(1, 3), paired=True).x[0, 0]
    values, grads, hess = basis_eval(space, mesh, 1, ref)
    local = coeffs[space.dof_map[1]]
    assert values @ local == pytest.approx(x[0] ** 2 + x[1] * x[2])
    np.testing.assert_allclose(grads.T @ local, [2 * x[0], x[2], x[1]], atol=1e-12)
    np.testing.assert_allclose(np.einsum("aij,a->ij", hess, local),
                               [[2, 0, 0], [0, 0, 1], [0, 1, 0]], atol=1e-10)


def test_lattice_matches_face_indices() -> None:
    basis = tensor_basis((2, 1, 3))
    assert basis.n_local == 3 * 2 * 4
    np.testing.assert_allclose(basis.lattice[basis.face_indices(5)][:, 2], 1.0)
    assert len(basis.face_indices(0)) == 2 * 4


def test_obstacle_and_cavity_maps() -> None:
    phi1, _ = obstacle_mapping("phi1")
    np.testing.assert_allclose(phi1(np.zeros(3)), [0.0, -0.25, 0.0], atol=1e-15)
    phi2, jac2 = obstacle_mapping("phi2")
    np.testing.assert_allclose(phi2(np.array([0.0, 0.205, 0.0])), [1.2, 0.0, 0.2 * np.sin(0.41)], atol=1e-14)
    assert jac2(np.array([0.3, 0.1, 0.2])).shape == (3, 3)
    cavity = compile_field(cavity_mapping_expressions(), (A, B, C))
    np.testing.assert_allclose(cavity(np.array([0.0, 1.0, 0.0])), [0.0, 1.0, 0.0], atol=1e-15)


def test_inverted_mapping_is_rejected() -> None:
    mesh = build_structured_hex_mesh(UNIT, (1, 1, 1), 1)
    with pytest.raises(InvertedElement):
        apply_geometry_mapping(mesh, lambda x: x * np.array([-1.0, 1.0, 1.0]))


def test_face_normals_and_areas() -> None:
    mesh = _all_faces(build_structured_hex_mesh(UNIT, (2, 1, 1), 2))
    assert mesh.boundary.tag_set() == {"left", "right", "rest"}
    left = face_quadrature_data(mesh, mesh.boundary.select("left"), 4)
    np.testing.assert_allclose(left.m.reshape(-1, 3), np.tile([-1.0, 0.0, 0.0], (left.m.size // 3, 1)), atol=1e-14)
    assert left.weights.sum() == pytest.approx(1.0)
    everything = face_quadrature_data(mesh, mesh.boundary, 4)
    total = np.einsum("fq,fqi->i", everything.weights, everything.m)
    np.testing.assert_allclose(total, 0.0, atol=1e-13)
    assert everything.weights.sum() == pytest.approx(6.0)


def test_mapped_faces_close() -> None:
    mesh = build_structured_hex_mesh(UNIT, (2, 2, 2), 3)
    mesh = _all_faces(apply_geometry_mapping(mesh, lambda x: x + 0.05 * np.sin(np.pi * x[:, [1, 2, 0]])))
    data = face_quadrature_data(mesh, mesh.boundary, 8)
    np.testing.assert_allclose(np.einsum("fq,fqi->i", data.weights, data.m), 0.0, atol=1e-10)


def test_untagged_face() -> None:
    mesh = build_structured_hex_mesh(UNIT, (1, 1, 1), 1)
    with pytest.raises(UntaggedFace):
        extract_boundary_faces(mesh, [("left", lambda p: abs(p[0]) < 1e-12)])


def test_locate_points_round_trip() -> None:
    mesh = build_structured_hex_mesh(UNIT, (3, 2, 2), 2)
    mesh = apply_geometry_mapping(mesh, lambda x: x + 0.04 * np.sin(np.pi * x[:, [1, 2, 0]]))
    rng = np.random.default_rng(11)
    elements = rng.integers(0, mesh.n_elements, 20)
    refs = rng.uniform(-0.8, 0.8, size=(20, 3))
    points = element_geometry(mesh, elements, refs, paired=True).x[:, 0]
    found, xi = locate_points(mesh, points)
    np.testing.assert_array_equal(found, elements)
    np.testing.assert_allclose(xi, refs, atol=1e-10)
