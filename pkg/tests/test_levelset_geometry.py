import numpy as np
import pytest
import sympy as sp

from bulkflow.core.benchmarks import AXISYM_HEIGHT, X, Y, Z, analytic_levelset, make_axisymmetric_case
from bulkflow.core.errors import DegenerateGradient, DegenerateTriad, GeometryError
from bulkflow.core.flow_assembly import quadrature_context
from bulkflow.core.levelset_geometry import (
    LevelSetField,
    boundary_frame,
    evaluate_frame,
    frames_from_derivatives,
)
from bulkflow.core.mesh_fe import quadrature
from bulkflow.core.tdc_ops import surface_divergence_tensor


def _plane():
    return LevelSetField.analytic(
        lambda x: x[..., 2],
        lambda x: np.broadcast_to([0.0, 0.0, 1.0], x.shape),
        lambda x: np.zeros(x.shape + (3,)),
        0.0, 1.0,
    )


def _sphere():
    def value(x):
        return np.linalg.norm(x, axis=-1)

    def gradient(x):
        return x / value(x)[..., None]

    def hessian(x):
        r = value(x)[..., None, None]
        n = x[..., :, None] / r
        return (np.eye(3) - n * np.swapaxes(n, -1, -2)) / r

    return LevelSetField.analytic(value, gradient, hessian, 0.5, 3.0, 6.0)


def test_plane_frame() -> None:
    frame = evaluate_frame(_plane(), np.array([[0.3, 0.2, 0.5], [1.0, -1.0, 0.1]]))
    np.testing.assert_allclose(frame.n, [[0, 0, 1], [0, 0, 1]])
    np.testing.assert_allclose(frame.P[0], np.diag([1.0, 1.0, 0.0]))
    np.testing.assert_allclose(frame.H, 0.0, atol=1e-15)
    np.testing.assert_allclose(frame.gauss_curvature, 0.0, atol=1e-15)


def test_sphere_curvatures() -> None:
    frame = evaluate_frame(_sphere(), np.array([0.0, 0.0, 2.0]))
    np.testing.assert_allclose(frame.H, np.diag([0.5, 0.5, 0.0]), atol=1e-14)
    assert frame.mean_curvature == pytest.approx(1.0)
    np.testing.assert_allclose(frame.principal_curvatures, [-0.5, -0.5], atol=1e-14)
    assert frame.gauss_curvature == pytest.approx(0.25)


def test_frame_identities_on_sphere() -> None:
    rng = np.random.default_rng(3)
    points = rng.uniform(-1.5, 1.5, size=(40, 3))
    frame = evaluate_frame(_sphere(), points)
    for name, defect in frame.invariant_defects().items():
        assert defect < 1e-12, name


def test_torus_mean_curvature_from_sympy() -> None:
    phi = (sp.sqrt(X ** 2 + Y ** 2) - 2) ** 2 + Z ** 2
    levelset = analytic_levelset(phi, 0.0625, 0.5625, 5.5)
    frame = evaluate_frame(levelset, np.array([2.5, 0.0, 0.0]))
    np.testing.assert_allclose(frame.n, [1.0, 0.0, 0.0], atol=1e-14)
    assert frame.grad_norm == pytest.approx(1.0)
    assert frame.mean_curvature == pytest.approx(2.4)


def test_boundary_triad() -> None:
    frame = evaluate_frame(_plane(), np.array([[0.0, 0.5, 0.5]]))
    triad = boundary_frame(frame, np.array([[-1.0, 0.0, 0.0]]))
    np.testing.assert_allclose(triad.t, [[0.0, 1.0, 0.0]], atol=1e-15)
    np.testing.assert_allclose(triad.q, [[-1.0, 0.0, 0.0]], atol=1e-15)
    assert triad.boundary_weight()[0] == pytest.approx(1.0)
    assert triad.invariant_defects()["q_dot_n"] < 1e-15


def test_boundary_triad_along_x() -> None:
    frame = evaluate_frame(_plane(), np.array([0.5, 0.0, 0.5]))
    triad = boundary_frame(frame, np.array([0.0, -1.0, 0.0]))
    np.testing.assert_allclose(triad.t, [-1.0, 0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(triad.q, [0.0, -1.0, 0.0], atol=1e-15)


def test_tangent_level_set_has_no_triad() -> None:
    frame = evaluate_frame(_plane(), np.array([0.5, 0.5, 1.0]))
    with pytest.raises(DegenerateTriad):
        boundary_frame(frame, frame.n)


def test_zero_gradient_is_rejected() -> None:
    with pytest.raises(DegenerateGradient):
        frames_from_derivatives(np.zeros((2, 3)), np.zeros((2, 3, 3)))


def test_empty_value_range_is_rejected() -> None:
    with pytest.raises(GeometryError):
        LevelSetField.analytic(lambda x: x[..., 0], lambda x: x, lambda x: x, 1.0, 1.0)


def test_projector_gradient_matches_finite_differences() -> None:
    levelset = _sphere()
    x = np.array([0.4, -0.7, 1.1])
    frame = evaluate_frame(levelset, x)
    eps = 1e-6
    for k in range(3):
        step = np.zeros(3)
        step[k] = eps
        diff = (evaluate_frame(levelset, x + step).P - evaluate_frame(levelset, x - step).P) / (2 * eps)
        np.testing.assert_allclose(frame.projector_gradient()[..., k], diff, atol=1e-8)


def test_closed_form_curvature_gradient_on_spheres() -> None:
    levelset = analytic_levelset(sp.sqrt(X ** 2 + Y ** 2 + Z ** 2), 0.5, 3.0, 6.0)
    x = np.array([[0.4, -0.7, 1.1], [2.0, 0.0, 0.0], [-1.0, 1.0, 0.5]])
    r = np.linalg.norm(x, axis=-1)
    np.testing.assert_allclose(levelset.curvature_gradient_fn(x), -2.0 * x / r[:, None] ** 3, rtol=1e-12, atol=1e-14)


def test_spherical_shell_volume_by_coarea() -> None:
    levelset = analytic_levelset(sp.sqrt(X ** 2 + Y ** 2 + Z ** 2), 1.0, 2.0, 4.0)
    rule = quadrature(6)
    ref = 0.5 * (rule.points + 1.0)
    total = 0.0
    # (azimuth, polar angle, radius) cells with the exact Jacobian r^2 sin(polar)
    for az in np.linspace(0.0, 2 * np.pi, 9)[:-1]:
        for polar in np.linspace(0.0, np.pi, 9)[:-1]:
            cell = np.array([az, polar, 1.0]) + ref * np.array([np.pi / 4, np.pi / 8, 1.0])
            a, b, r = cell[:, 0], cell[:, 1], cell[:, 2]
            x = np.stack([r * np.sin(b) * np.cos(a), r * np.sin(b) * np.sin(a), r * np.cos(b)], axis=-1)
            weight = evaluate_frame(levelset, x).coarea_weight()
            total += np.sum(rule.weights / 8 * (np.pi / 4) * (np.pi / 8) * r ** 2 * np.sin(b) * weight)
    # int_1^2 |{phi = c}| dc = int_1^2 4 pi c^2 dc
    assert total == pytest.approx(28.0 * np.pi / 3.0, rel=1e-8)


def _divergence_theorem_defect(refine_level: int, q_geom: int) -> float:
    case = make_axisymmetric_case(refine_level, q_geom=q_geom)
    spaces = case.build_spaces()
    lo, hi = case.levelset.phi_min, case.levelset.phi_max
    lhs = rhs = 0.0
    ids = np.arange(case.mesh.n_elements)
    for start in range(0, len(ids), 32):
        ctx = quadrature_context(spaces, case.levelset, ids[start:start + 32])
        x, frame = ctx.x, ctx.frame
        phi, grad_phi, _ = case.levelset.evaluate(x)
        z = x[..., 2]
        # test field vanishing on every boundary of the annulus
        bump = (phi - lo) * (hi - phi) * z * (AXISYM_HEIGHT - z)
        d_bump = ((hi - phi) - (phi - lo))[..., None] * (z * (AXISYM_HEIGHT - z))[..., None] * grad_phi
        d_bump[..., 2] += (phi - lo) * (hi - phi) * (AXISYM_HEIGHT - 2 * z)
        direction = np.array([1.0, 2.0, 0.5])
        v = bump[..., None] * direction
        grad_v = direction[:, None] * d_bump[..., None, :]
        # T = P is in-plane, so int v . div_G P = -int grad_G v : P
        div_P = surface_divergence_tensor(frame.projector_gradient(), frame.P)
        lhs += float(np.sum(ctx.weights * np.einsum("eqi,eqi->eq", v, div_P)))
        rhs -= float(np.sum(ctx.weights * np.einsum("eqik,eqki->eq", grad_v, frame.P)))
    return abs(lhs - rhs)


def test_bulk_divergence_theorem_converges() -> None:
    q_geom = 2
    coarse = _divergence_theorem_defect(0, q_geom)
    fine = _divergence_theorem_defect(1, q_geom)
    assert fine < coarse
    assert np.log2(coarse / fine) >= q_geom - 1
