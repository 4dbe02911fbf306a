import csv
import os

import pytest

from bulkflow.core.errors import ConfigError, ParseError
from bulkflow_runner import BulkFlowRunner, load_run_config, main, parse_overrides
from utils.config import parse_config


def _args(tmp_path, *settings):
    args = ["--set", f"output_dir={tmp_path}", "--set", "write_vtk=false"]
    for item in settings:
        args += ["--set", item]
    return args


def test_overrides() -> None:
    assert parse_overrides(["case = torus", "dt=0.5"]) == {"case": "torus", "dt": "0.5"}
    with pytest.raises(ParseError):
        parse_overrides(["oops"])
    with pytest.raises(ParseError):
        parse_overrides(["=3"])


def test_missing_run_document(tmp_path) -> None:
    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / "absent.ini"), {})


def test_run_document_from_file(tmp_path) -> None:
    path = tmp_path / "run.ini"
    path.write_text("case = decay\nt_end = 0.2\n", encoding="utf-8")
    run = load_run_config(str(path), {"dt": "0.1"})
    assert run.case == "decay" and run.dt == pytest.approx(0.1)


def test_unknown_command(tmp_path) -> None:
    runner = BulkFlowRunner(parse_config("case = poiseuille", {"output_dir": str(tmp_path)}))
    with pytest.raises(ConfigError):
        runner.run("plot")


def test_solve_writes_report(tmp_path) -> None:
    assert main(["solve"] + _args(tmp_path, "case=poiseuille")) == 0
    report = tmp_path / "poiseuille" / "report.txt"
    assert report.exists()
    assert "vel_l2" in report.read_text(encoding="utf-8")


def test_configuration_errors_exit_with_two(tmp_path) -> None:
    assert main(["solve"] + _args(tmp_path)) == 2
    assert main(["solve"] + _args(tmp_path, "case=torus", "mu=-1")) == 2


def test_picard_cap_exits_with_seven(tmp_path) -> None:
    assert main(["solve"] + _args(tmp_path, "case=cavity", "picard_max_iter=0")) == 7


def test_decay_march_series(tmp_path) -> None:
    assert main(["march"] + _args(tmp_path, "case=decay", "t_end=0.1")) == 0
    with open(os.path.join(tmp_path, "decay", "time_series.csv"), encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    assert [float(r["t"]) for r in rows] == pytest.approx([0.0, 0.05, 0.1])
    assert float(rows[0]["vel_l2"]) < 5e-2
    assert float(rows[-1]["vel_l2"]) < 5e-2


def _axisymmetric_rates(tmp_path, settings: str):
    run = parse_config(f"case = stokes_axisym\n{settings}", {"output_dir": str(tmp_path), "write_vtk": "false"})
    result = BulkFlowRunner(run).run("converge")
    assert (tmp_path / "stokes_axisym" / "convergence.csv").exists()
    last = result["rows"][-1]
    return {metric: last[f"rate_{metric}"] for metric in ("vel_l2", "energy", "resid_mom", "resid_cont")}


@pytest.mark.slow
def test_axisymmetric_rates_on_the_coarse_pair(tmp_path) -> None:
    rates = _axisymmetric_rates(tmp_path, "refine_levels = 0, 1")
    # the coarsest pair still overshoots the velocity rate a little
    assert 2.7 <= rates["vel_l2"] <= 3.6
    assert rates["energy"] >= 3.7
    assert rates["resid_mom"] == pytest.approx(1.0, abs=0.3)
    assert rates["resid_cont"] == pytest.approx(2.0, abs=0.3)


@pytest.mark.slow
def test_axisymmetric_rates_q2(tmp_path) -> None:
    rates = _axisymmetric_rates(tmp_path, "refine_levels = 1, 2")
    assert rates["vel_l2"] == pytest.approx(3.0, abs=0.3)
    assert rates["energy"] >= 2 + 1.7
    assert rates["resid_mom"] == pytest.approx(1.0, abs=0.3)
    assert rates["resid_cont"] == pytest.approx(2.0, abs=0.3)


@pytest.mark.slow
def test_axisymmetric_rates_q3(tmp_path) -> None:
    rates = _axisymmetric_rates(tmp_path, "q_u = 3\nrefine_levels = 0, 1")
    assert rates["vel_l2"] >= 4.0 - 0.4
    assert rates["energy"] >= 3 + 0.7
    assert rates["resid_mom"] >= 2.0 - 0.3
    assert rates["resid_cont"] >= 3.0 - 0.3
