import numpy as np
import pytest

from bulkflow.core.benchmarks import make_slab_case
from bulkflow.core.errors import IoError
from bulkflow.core.flow_assembly import FlowState
from utils.output_writer import (
    collect_columns,
    nodal_derived_fields,
    render_table,
    vtk_lagrange_order,
    write_csv_series,
    write_report,
    write_vtk,
)


@pytest.fixture(scope="module")
def rotation():
    case = make_slab_case("poiseuille", 0)
    spaces = case.build_spaces()
    state = FlowState.interpolate(spaces, lambda x: np.stack([-x[:, 1], x[:, 0], np.zeros(len(x))], axis=1))
    return case, spaces, state


def test_linear_vtk_order() -> None:
    np.testing.assert_array_equal(vtk_lagrange_order(1), [0, 1, 3, 2, 4, 5, 7, 6])


def test_quadratic_vtk_order_is_a_permutation() -> None:
    perm = vtk_lagrange_order(2)
    np.testing.assert_array_equal(np.sort(perm), np.arange(27))
    # first edge (0,0,0)-(1,0,0) midpoint, then the volume center last
    assert perm[8] == 1
    assert perm[26] == 13


def test_csv_series(tmp_path) -> None:
    path = write_csv_series(str(tmp_path / "series.csv"), ["t", "ekin"], [{"t": 0, "ekin": 0.1}, {"t": 1, "ekin": 1 / 3}])
    lines = open(path, encoding="utf-8").read().split("\n")
    assert lines[0] == "t,ekin"
    assert float(lines[1].split(",")[1]) == 0.1
    assert float(lines[2].split(",")[1]) == 1 / 3
    empty = write_csv_series(str(tmp_path / "empty.csv"), ["t"], [])
    assert open(empty, encoding="utf-8").read() == "t\n"


def test_csv_missing_column(tmp_path) -> None:
    with pytest.raises(IoError):
        write_csv_series(str(tmp_path / "bad.csv"), ["t", "ekin"], [{"t": 0.0}])


def test_report(tmp_path) -> None:
    rows = [{"level": 0, "h": 0.5}, {"level": 1, "h": 0.25, "rate_vel_l2": 2.0}]
    columns = collect_columns(rows)
    assert columns == ["level", "h", "rate_vel_l2"]
    path = write_report(str(tmp_path / "out" / "report.txt"), "bulkflow converge", {"case": "torus", "mu": 0.1},
                        [render_table("convergence", columns, rows)])
    text = open(path, encoding="utf-8").read()
    assert "bulkflow converge" in text
    assert "case: torus" in text
    assert "rate_vel_l2" in text


def test_derived_fields(rotation) -> None:
    case, spaces, state = rotation
    fields = nodal_derived_fields(spaces, state, case.levelset)
    np.testing.assert_allclose(fields["vorticity"], 2.0, atol=1e-10)
    np.testing.assert_allclose(fields["normal_velocity"], 0.0, atol=1e-14)
    np.testing.assert_allclose(fields["phi"], spaces.velocity.dof_coords[:, 2], atol=1e-14)


def test_vtk_file(tmp_path, rotation) -> None:
    vtk = pytest.importorskip("vtk")
    case, spaces, state = rotation
    path = write_vtk(spaces, state, case.levelset, str(tmp_path / "rotation.vtu"))
    reader = vtk.vtkXMLUnstructuredGridReader()
    reader.SetFileName(path)
    reader.Update()
    grid = reader.GetOutput()
    assert grid.GetNumberOfPoints() == spaces.n_nodes
    assert grid.GetNumberOfCells() == spaces.mesh.n_elements
    assert grid.GetPointData().GetArray("velocity").GetNumberOfComponents() == 3
    assert grid.GetPointData().GetArray("vorticity") is not None
