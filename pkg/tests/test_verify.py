import math

import numpy as np
import pytest

from bulkflow.core.benchmarks import make_slab_case
from bulkflow.core.errors import InsufficientData, ProbeOffSurface, VerificationError
from bulkflow.core.flow_assembly import FlowState
from bulkflow.core.verify import (
    ErrorReport,
    SurfaceProbe,
    convergence_rates,
    energy_error,
    error_report,
    line_profile,
    normal_velocity_error,
    profile_self_convergence,
    residual_errors,
    shell_kinetic_energy,
    surface_quantity,
    velocity_l2_error,
    velocity_mass_norm,
)


@pytest.fixture(scope="module")
def slab():
    case = make_slab_case("poiseuille", 0)
    spaces = case.build_spaces()
    exact = case.exact
    state = FlowState.interpolate(spaces, exact.velocity, exact.pressure)
    return case, spaces, state


def _mid_plane_probe(**kwargs):
    def surface(s, t):
        return np.stack([s, t, np.full_like(s, 0.125)], axis=-1)

    return SurfaceProbe.from_parametrization(0.125, surface, (0.0, 2.0), (0.0, 1.0), (4, 6), name="mid", **kwargs)


def _report(h, vel, mom=1.0, cont=0.0):
    return ErrorReport(vel_l2=vel, energy=vel, resid_mom=mom, resid_cont=cont, normal_vel=0.0, mesh_size=h)


def test_rates_from_exact_power_laws() -> None:
    reports = [_report(h, h ** 2) for h in (1.0, 0.5, 0.25)]
    rates = convergence_rates(reports)
    assert rates["vel_l2"] == pytest.approx(2.0)
    assert rates["energy"] == pytest.approx(2.0)
    assert rates["resid_mom"] == pytest.approx(0.0, abs=1e-12)
    assert math.isnan(rates["resid_cont"])


def test_rates_use_the_last_three_levels() -> None:
    errors = [1.0, 0.9, 0.5 ** 3, 0.25 ** 3, 0.125 ** 3]
    reports = [_report(0.5 ** k, e) for k, e in enumerate(errors)]
    assert convergence_rates(reports)["vel_l2"] == pytest.approx(3.0)


def test_rates_need_three_decreasing_sizes() -> None:
    with pytest.raises(InsufficientData):
        convergence_rates([_report(1.0, 1.0), _report(0.5, 0.25)])
    with pytest.raises(InsufficientData):
        convergence_rates([_report(1.0, 1.0), _report(0.5, 0.25), _report(0.5, 0.1)])


def test_report_rejects_negative_errors() -> None:
    with pytest.raises(VerificationError):
        _report(1.0, -1.0)


def test_interpolant_errors(slab) -> None:
    case, spaces, state = slab
    assert velocity_l2_error(state, case.exact, case.levelset, spaces) == pytest.approx(0.0, abs=1e-12)
    shifted = FlowState(state.velocity + np.array([[1.0], [0.0], [0.0]]), state.pressure)
    assert velocity_l2_error(shifted, case.exact, case.levelset, spaces) == pytest.approx(math.sqrt(0.5))


def test_energy_error_of_doubled_field(slab) -> None:
    case, spaces, state = slab
    doubled = FlowState(2.0 * state.velocity, state.pressure)
    # e(u) = mu/2 int |du/dy|^2 = 4/3
    assert energy_error(doubled, case.exact, case.levelset, spaces, case.problem.mu) == pytest.approx(4.0)
    assert energy_error(state, case.exact, case.levelset, spaces, case.problem.mu) == pytest.approx(0.0, abs=1e-12)


def test_exact_fields_have_no_residual(slab) -> None:
    case, spaces, state = slab
    mom, cont = residual_errors(state, case.problem, case.levelset, spaces)
    assert mom == pytest.approx(0.0, abs=1e-9)
    assert cont == pytest.approx(0.0, abs=1e-10)


def test_error_report_row(slab) -> None:
    case, spaces, state = slab
    report = error_report(state, case.problem, case.exact, case.levelset, spaces)
    row = report.as_row()
    assert row["dofs_velocity"] == spaces.n_velocity
    assert report.normal_vel == pytest.approx(0.0, abs=1e-20)
    assert report.mesh_size == pytest.approx(0.25)


def test_normal_velocity_and_mass_norm(slab) -> None:
    case, spaces, state = slab
    lifted = FlowState(np.vstack([np.zeros((2, spaces.n_nodes)), np.ones((1, spaces.n_nodes))]), state.pressure)
    assert normal_velocity_error(lifted, case.levelset, spaces) == pytest.approx(0.5)
    assert velocity_mass_norm(lifted, case.levelset, spaces) == pytest.approx(0.5)


def test_probe_kinetic_energy(slab) -> None:
    case, spaces, state = slab
    probe = _mid_plane_probe()
    assert probe.area == pytest.approx(2.0)
    # 1/2 int_0^2 int_0^1 (4y(1-y))^2 = 8/15
    assert surface_quantity(probe, state, spaces, case.levelset, "kinetic_energy") == pytest.approx(8.0 / 15.0)


def test_probe_pressure_difference(slab) -> None:
    case, spaces, state = slab
    probe = _mid_plane_probe(pressure_points={"front": (0.5, 0.5, 0.125), "back": (1.5, 0.5, 0.125)})
    assert surface_quantity(probe, state, spaces, case.levelset, "pressure_diff",
                            points=("front", "back")) == pytest.approx(8.0)
    assert surface_quantity(probe, state, spaces, case.levelset, "pressure_at",
                            points=("front",)) == pytest.approx(4.0)
    with pytest.raises(ProbeOffSurface):
        surface_quantity(probe, state, spaces, case.levelset, "pressure_at", points=("side",))
    with pytest.raises(VerificationError):
        surface_quantity(probe, state, spaces, case.levelset, "enstrophy")


def test_probe_off_its_surface(slab) -> None:
    case, spaces, state = slab

    def surface(s, t):
        return np.stack([s, t, np.full_like(s, 0.125)], axis=-1)

    probe = SurfaceProbe.from_parametrization(0.2, surface, (0.0, 2.0), (0.0, 1.0), (2, 2))
    with pytest.raises(ProbeOffSurface):
        surface_quantity(probe, state, spaces, case.levelset, "kinetic_energy")


def test_shell_energy(slab) -> None:
    case, spaces, state = slab
    energy = shell_kinetic_energy(state, spaces, case.levelset, 0.125, 0.125)
    assert energy == pytest.approx(8.0 / 15.0)
    with pytest.raises(VerificationError):
        shell_kinetic_energy(state, spaces, case.levelset, 0.125, 0.0)


def test_line_profile(slab) -> None:
    _, spaces, state = slab
    profile = line_profile(state, spaces, (1.0, 0.0, 0.1), (1.0, 1.0, 0.1), n=5)
    s = profile["s"]
    np.testing.assert_allclose(profile["velocity"][:, 0], 4 * s * (1 - s), atol=1e-12)
    np.testing.assert_allclose(profile["pressure"], 0.0, atol=1e-12)


def test_profile_self_convergence_second_order() -> None:
    s = np.linspace(0.0, 1.0, 11)
    limit = np.sin(np.pi * s)
    profiles = [limit + 0.1 * h ** 2 * np.ones_like(s) for h in (1.0, 0.5, 0.25)]
    result = profile_self_convergence(profiles)
    assert result["observed_order"] == pytest.approx(2.0)
    assert result["rel_change"] == pytest.approx(0.1 * (0.25 - 0.0625) / (1.0 + 0.1 * 0.0625))


def test_profile_self_convergence_two_levels() -> None:
    result = profile_self_convergence([np.zeros(3), np.ones(3)])
    assert result["rel_change"] == pytest.approx(1.0)
    assert math.isnan(result["observed_order"])


def test_profile_self_convergence_rejects_bad_input() -> None:
    with pytest.raises(InsufficientData):
        profile_self_convergence([np.zeros(3)])
    with pytest.raises(InsufficientData):
        profile_self_convergence([np.zeros(3), np.zeros(4)])
