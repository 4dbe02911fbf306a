import math

import numpy as np
import pytest

from bulkflow.core.benchmarks import (
    TimeConfig,
    cavity_pin_nodes,
    discrete_image,
    get_case,
    inflow_profile,
    lid_speed,
    make_axisymmetric_case,
    make_cavity_case,
    make_obstacle_case,
    make_slab_case,
    make_torus_case,
    obstacle_mapping_expressions,
    torus_initial_velocity,
)
from bulkflow.core.errors import ConfigError
from bulkflow.core.flow_assembly import assemble_base, crank_nicolson_advance
from bulkflow.core.levelset_geometry import evaluate_frame
from bulkflow.core.mesh_fe import build_structured_hex_mesh
from bulkflow.core.verify import normal_velocity_error, surface_quantity, velocity_mass_norm
from utils.config import parse_config


def test_profiles_and_lid() -> None:
    assert inflow_profile(0.205) == pytest.approx(1.5)
    assert inflow_profile(0.0) == 0.0
    assert lid_speed(0.125) == pytest.approx(0.5)


def test_time_config() -> None:
    assert TimeConfig(0.0, 60.0, 0.1).n_steps == 600
    assert TimeConfig(0.0, 0.5, 0.05).n_steps == 10


def test_unknown_variants() -> None:
    with pytest.raises(ConfigError):
        obstacle_mapping_expressions("phi4")
    with pytest.raises(ConfigError):
        make_slab_case("couette")


def test_discrete_image_of_flat_mesh_is_identity() -> None:
    mesh = build_structured_hex_mesh(((0.0, 1.0), (0.0, 1.0), (0.0, 1.0)), (2, 2, 2), 2)
    points = np.array([[0.1, 0.2, 0.3], [0.5, 0.5, 0.5], [1.0, 0.0, 0.7]])
    np.testing.assert_allclose(discrete_image(mesh, points), points, atol=1e-12)


def test_axisymmetric_exact_field() -> None:
    case = make_axisymmetric_case(0)
    assert case.mesh.boundary.tag_set() == {"free", "inflow", "outflow"}
    theta = np.linspace(0.0, 2 * np.pi, 7)
    c = 1.0
    r = c + 0.2 * np.sin(1.0)
    inflow = np.stack([r * np.cos(theta), r * np.sin(theta), np.zeros_like(theta)], axis=-1)
    speed = np.linalg.norm(case.exact.velocity(inflow), axis=-1)
    np.testing.assert_allclose(speed, 1.0, atol=1e-12)
    phi, _, _ = case.levelset.evaluate(inflow)
    np.testing.assert_allclose(phi, c, atol=1e-12)


def test_obstacle_case_layout() -> None:
    case = make_obstacle_case("phi2")
    assert case.mesh.n_elements == 48
    assert case.mesh.boundary.tag_set() == {"free", "inflow", "outflow", "wall", "obstacle"}
    assert [p.name for p in case.probes] == ["c=0", "c=0.166667", "c=0.333333"]
    for probe in case.probes:
        probe.check(case.levelset)
        assert set(probe.pressure_points) == {"front", "back"}
    assert case.time is None


def test_instationary_obstacle_defaults() -> None:
    case = make_obstacle_case("phi3", stationary=False, t_end=0.05)
    assert case.problem.mu == pytest.approx(0.002)
    assert case.time.n_steps == 5


def test_cavity_case() -> None:
    case = make_cavity_case()
    assert case.problem.stabilization == "pspg"
    assert case.pressure_orders == (2, 2, 2)
    nodes = cavity_pin_nodes(case.mesh, case.pressure_orders)
    assert len(nodes) == 2 * 2 + 1
    assert set(case.profiles) == {"u_vertical", "v_horizontal"}
    with pytest.raises(ConfigError):
        make_cavity_case(q_u=1)
    with pytest.raises(ConfigError):
        make_cavity_case(divisions=(3, 4, 2))


def test_torus_case() -> None:
    case = make_torus_case(0)
    assert case.mesh.n_nodes == 24 * 12 * 4
    assert [p.name for p in case.probes] == ["r=0.25", "r=0.5", "r=0.75"]
    middle = case.probes[1]
    assert middle.area == pytest.approx(4 * math.pi ** 2 * 2.0 * 0.5, rel=1e-8)
    middle.check(case.levelset)
    assert case.time.n_steps == 600


def test_torus_initial_velocity_is_tangential() -> None:
    case = make_torus_case(0, probe_resolution=(4, 4))
    rng = np.random.default_rng(5)
    points = case.param_map(np.column_stack([rng.uniform(0, 2 * np.pi, 20), rng.uniform(0, 2 * np.pi, 20),
                                             rng.uniform(0.25, 0.75, 20)]))
    frame = evaluate_frame(case.levelset, points)
    u = torus_initial_velocity(points)
    np.testing.assert_allclose(np.einsum("pi,pi->p", u, frame.n), 0.0, atol=1e-12)


def test_decay_exact_solution() -> None:
    case = make_slab_case("decay", 0)
    x = np.array([[0.3, 0.5, 0.1]])
    decay = math.exp(-math.pi ** 2 * 0.2)
    np.testing.assert_allclose(case.exact_solution(0.2).velocity(x), [[decay, 0.0, 0.0]], atol=1e-14)
    assert case.exact_solution() is case.exact


@pytest.mark.parametrize("name", ["poiseuille", "decay", "torus", "stokes_axisym"])
def test_registry(name) -> None:
    case = get_case(parse_config(f"case = {name}"))
    assert case.name == name
    assert case.mesh.boundary is not None


def test_registry_passes_refinement() -> None:
    run = parse_config("case = poiseuille\nrefine_level = 1")
    assert get_case(run).mesh.n_elements == 4 * 4 * 1
    assert get_case(run, refine_level=0).mesh.n_elements == 2 * 2 * 1


@pytest.mark.slow
def test_obstacle_pressure_drop(tmp_path) -> None:
    from bulkflow_runner import BulkFlowRunner

    run = parse_config("case = obstacle\nmapping = phi1", {"output_dir": str(tmp_path), "write_vtk": "false"})
    result = BulkFlowRunner(run).run("solve")
    drops = [v for k, v in result["probes"].items() if k.startswith("dp_")]
    assert len(drops) == 3
    assert all(d > 0 for d in drops)
    # mu = 0.01 converges within the default cap of 50 with a contracting tail
    history = result["history"]
    assert 1 < len(history) <= 50
    assert history[-1] <= run.picard_tol
    tail = history[-3:]
    assert all(later < earlier for earlier, later in zip(tail, tail[1:]))


@pytest.mark.slow
def test_cavity_profiles(tmp_path) -> None:
    from bulkflow_runner import main

    assert main(["solve", "--set", "case=cavity", "--set", f"output_dir={tmp_path}",
                 "--set", "write_vtk=false"]) == 0
    assert (tmp_path / "cavity" / "profile_u_vertical.csv").exists()


@pytest.mark.slow
def test_cavity_profiles_self_converge(tmp_path) -> None:
    from bulkflow_runner import BulkFlowRunner

    run = parse_config("case = cavity\nrefine_levels = 0, 1, 2", {"output_dir": str(tmp_path), "write_vtk": "false"})
    result = BulkFlowRunner(run).run("converge")
    assert set(result["self_convergence"]) == {"u_vertical", "v_horizontal"}
    for name, entry in result["self_convergence"].items():
        assert entry["rel_change"] <= 0.02, name
        assert entry["observed_order"] > 0, name
    report = (tmp_path / "cavity" / "report.txt").read_text(encoding="utf-8")
    assert "profile u_vertical rel_change" in report


@pytest.mark.slow
def test_torus_energy_decays_to_a_plateau() -> None:
    case = make_torus_case(0, probe_resolution=(16, 8))
    spaces = case.build_spaces()
    probe = case.probes[1]
    base = assemble_base(case.problem, spaces, case.levelset)
    dt = case.time.dt
    state = case.initial_state(spaces)
    initial = surface_quantity(probe, state, spaces, case.levelset, "kinetic_energy")
    energies = [1.0]
    for _ in range(case.time.n_steps):
        state = crank_nicolson_advance(case.problem, spaces, case.levelset, state, dt, 1e-8, base=base)
        energies.append(surface_quantity(probe, state, spaces, case.levelset, "kinetic_energy") / initial)
        normal = normal_velocity_error(state, case.levelset, spaces)
        assert normal <= 1e-4 * velocity_mass_norm(state, case.levelset, spaces), state.time
    assert state.time == pytest.approx(60.0)
    assert np.diff(energies).max() <= 1e-6
    # t = 50 is step 500
    assert abs(energies[600] - energies[500]) <= 1e-3
    assert energies[-1] > 0
