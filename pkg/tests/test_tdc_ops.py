import numpy as np
import pytest

from bulkflow.core.benchmarks import _axisym_expressions, _velocity_derivatives, analytic_levelset
from bulkflow.core.errors import GeometryError, NonpositiveViscosity
from bulkflow.core.levelset_geometry import LevelSetField, evaluate_frame
from bulkflow.core.tdc_ops import (
    PointGradients,
    strain_and_stress,
    stress_divergence,
    surface_divergence_vector,
    surface_gradients,
    vorticity_scalar,
)

FLAT_P = np.diag([1.0, 1.0, 0.0])


def _flat(sign=1.0):
    return LevelSetField.analytic(
        lambda x: sign * x[..., 2],
        lambda x: np.broadcast_to([0.0, 0.0, sign], x.shape),
        lambda x: np.zeros(x.shape + (3,)),
        -1.0, 1.0,
    )


def test_surface_gradients_of_identity_and_scalar() -> None:
    g = PointGradients(scalar_grad=np.array([1.0, 2.0, 3.0]), vector_grad=np.eye(3))
    dir_grad, cov_grad, surf_grad = surface_gradients(g, FLAT_P)
    np.testing.assert_allclose(dir_grad, FLAT_P)
    np.testing.assert_allclose(cov_grad, FLAT_P)
    np.testing.assert_allclose(surf_grad, [1.0, 2.0, 0.0])
    assert surface_divergence_vector(g, FLAT_P) == pytest.approx(2.0)


def test_missing_inputs_give_none() -> None:
    dir_grad, cov_grad, surf_grad = surface_gradients(PointGradients(), FLAT_P)
    assert dir_grad is None and cov_grad is None and surf_grad is None


def test_asymmetric_second_derivatives_are_rejected() -> None:
    s = np.zeros((3, 3, 3))
    s[0, 0, 1] = 1.0
    with pytest.raises(GeometryError):
        PointGradients(second_derivs=s)


def test_pressure_only_stress() -> None:
    g = PointGradients(vector_grad=np.zeros((3, 3)))
    _, eps_cov, stress = strain_and_stress(g, 1.0, 0.5, FLAT_P)
    np.testing.assert_allclose(eps_cov, 0.0)
    np.testing.assert_allclose(stress.sigma, -FLAT_P)
    assert stress.in_plane_defect(FLAT_P) == 0.0


def test_rigid_rotation_is_strain_free_with_vorticity_two() -> None:
    grad = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    g = PointGradients(vector_grad=grad)
    _, eps_cov, _ = strain_and_stress(g, 0.0, 1.0, FLAT_P)
    np.testing.assert_allclose(eps_cov, 0.0)
    x = np.array([0.1, 0.2, 0.3])
    assert vorticity_scalar(g, evaluate_frame(_flat(), x)) == pytest.approx(2.0)
    assert vorticity_scalar(g, evaluate_frame(_flat(-1.0), x)) == pytest.approx(-2.0)


def test_nonpositive_viscosity() -> None:
    g = PointGradients(vector_grad=np.eye(3))
    with pytest.raises(NonpositiveViscosity):
        strain_and_stress(g, 0.0, 0.0, FLAT_P)


def test_stress_divergence_of_linear_pressure() -> None:
    frame = evaluate_frame(_flat(), np.array([0.3, 0.3, 0.3]))
    g = PointGradients(vector_grad=np.zeros((3, 3)), second_derivs=np.zeros((3, 3, 3)))
    r = stress_divergence(g, 0.3, np.array([1.0, 0.0, 0.0]), 1.0, frame)
    np.testing.assert_allclose(r, [-1.0, 0.0, 0.0], atol=1e-14)


def test_stress_divergence_of_poiseuille_profile_balances_pressure() -> None:
    # u = (4y(1-y), 0, 0), p = -8 mu x
    mu = 0.7
    frame = evaluate_frame(_flat(), np.array([0.5, 0.25, 0.1]))
    grad = np.zeros((3, 3))
    grad[0, 1] = 4.0 - 8.0 * 0.25
    second = np.zeros((3, 3, 3))
    second[0, 1, 1] = -8.0
    g = PointGradients(vector_grad=grad, second_derivs=second)
    r = stress_divergence(g, -8.0 * mu * 0.5, np.array([-8.0 * mu, 0.0, 0.0]), mu, frame)
    np.testing.assert_allclose(r, 0.0, atol=1e-13)


def test_axisymmetric_transport_is_tangentially_divergence_free() -> None:
    phi, u = _axisym_expressions()
    levelset = analytic_levelset(phi, 0.8, 1.2, 4.0)
    velocity, velocity_grad, _ = _velocity_derivatives(u)
    rng = np.random.default_rng(7)
    theta = rng.uniform(0, 2 * np.pi, 12)
    z = rng.uniform(0, 3, 12)
    r = rng.uniform(0.8, 1.2, 12) + 0.2 * np.sin(1 + 3 * z)
    x = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=-1)
    frame = evaluate_frame(levelset, x)
    g = PointGradients(vector_grad=velocity_grad(x))
    u_n = np.einsum("pi,pi->p", velocity(x), frame.n)
    np.testing.assert_allclose(u_n, 0.0, atol=1e-12)
    div = surface_divergence_vector(g, frame.P) - frame.mean_curvature * u_n
    np.testing.assert_allclose(div, 0.0, atol=1e-10)
