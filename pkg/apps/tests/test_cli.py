import json
import os

import pytest

import apps.cli
from apps.cli import (
    EXIT_CONFIG,
    EXIT_FAILURE,
    EXIT_OK,
    build_parser,
    config_from_args,
    main,
    run,
    solver_options,
)
from apps.config import Command, RunConfig
from apps.snee.config import SOLVER_OPTIONS
from apps.snee.errors import GridSolveError


def _read_json(fp):
    with open(fp, "r", encoding="utf-8") as f:
        return json.load(f)


def test_list_problems(tmp_path, capsys):
    """Test the list-problems command."""
    assert main(["list-problems", "--out", str(tmp_path)]) == EXIT_OK
    records = _read_json(tmp_path / "problems.json")
    assert len(records) == 8
    assert records[0]["name"] == "ZLT1"
    assert json.loads(capsys.readouterr().out) == records


@pytest.mark.parametrize(
    "argv",
    [
        ["knee"],
        ["subfront", "--problem", "ZLT1"],
        ["knee", "--problem", "ZLT2"],
        ["knee", "--problem", "ZLT1", "--start", "0.5,0.5"],
        ["subfront", "--problem", "ZLT1", "--kind", "ball"],
        ["knee", "--problem", "ZLT1", "--grid-step", "0.03"],
        ["subfront", "--problem", "ZLT1", "--kind", "ball", "--alpha-mode", "adaptive"],
        ["knee", "--problem", "ZLT1", "--start", "0.8,0.1,0.1", "--seedless"],
    ],
)
def test_invalid_configuration(argv, tmp_path, capsys):
    """Test that invalid settings exit with code 2 and write nothing."""
    assert main([*argv, "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "invalid configuration" in capsys.readouterr().err
    assert os.listdir(tmp_path) == []


@pytest.mark.parametrize(
    "argv",
    [
        ["optimize"],
        ["knee", "--method", "bfgs"],
        ["subfront", "--kind", "sphere"],
    ],
)
def test_invalid_arguments(argv):
    """Test that argparse rejects unknown commands and choices."""
    with pytest.raises(SystemExit):
        main(argv)


def test_config_from_args():
    """Test config_from_args function."""
    args = build_parser().parse_args(
        [
            "subfront",
            "--problem",
            "ZLT1q",
            "--nbar",
            "4",
            "--qbar",
            "3",
            "--kind",
            "ellipsoid",
            "--alpha-mode",
            "adaptive",
            "--center",
            "0.5,0.25,0.25",
            "--no-warm-start",
        ]
    )
    config = config_from_args(args)
    assert config.command == Command.subfront
    assert config.params == {"nbar": 4, "qbar": 3}
    assert config.neighborhood.alpha_mode == "adaptive"
    assert config.center == (0.5, 0.25, 0.25)
    assert config.warm_start is False


def test_solver_options():
    """Test that command line options override the solver settings."""
    config = RunConfig(
        command="knee", problem="ZLT1", inner_tol=1e-6, inner_maxiter=50, workers=2
    )
    opts = solver_options(config)
    assert (opts.tol_stat, opts.tol_kkt) == (1e-6, 1e-6)
    assert opts.max_iter == 50
    assert opts.workers == 2
    assert opts.sqp_max_iter == SOLVER_OPTIONS.sqp_max_iter
    assert solver_options(RunConfig(command="table1")) == SOLVER_OPTIONS


def test_check_grad(tmp_path):
    """Test the check-grad command."""
    argv = ["check-grad", "--problem", "ZLT1", "--center", "0.6,0.3,0.1"]
    assert main([*argv, "--out", str(tmp_path)]) == EXIT_OK
    report = _read_json(tmp_path / "check_grad_ZLT1.json")
    assert report["max_rel_error"] <= 1e-4


def test_subfront(tmp_path):
    """Test the subfront command and the reproducibility of its outputs."""
    argv = [
        "subfront",
        "--problem",
        "ZLT1",
        "--kind",
        "ball",
        "--size",
        "0.4",
        "--center",
        "0.8,0.1,0.1",
        "--grid-step",
        "0.1",
    ]
    for directory in ("first", "second"):
        assert main([*argv, "--out", str(tmp_path / directory)]) == EXIT_OK
    for name in ("subfront_ZLT1_B_r.csv", "subfront_ZLT1_B_r_summary.json"):
        with open(tmp_path / "first" / name, "rb") as f:
            first = f.read()
        with open(tmp_path / "second" / name, "rb") as f:
            assert f.read() == first
    summary = _read_json(tmp_path / "first" / "subfront_ZLT1_B_r_summary.json")
    assert summary["count"] >= 2
    assert 0.0 < summary["mcm"] <= 1.0
    with open(tmp_path / "first" / "subfront_ZLT1_B_r.csv", "r", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
    assert header[:2] == ["grid_index", "lambda_1"]


def test_knee(tmp_path):
    """Test the knee command with JSON output."""
    argv = [
        "knee",
        "--problem",
        "VFM1",
        "--method",
        "nm",
        "--start",
        "0.4,0.2,0.4",
        "--grid-step",
        "0.1",
        "--budget",
        "60",
        "--format",
        "json",
    ]
    assert main([*argv, "--out", str(tmp_path)]) == EXIT_OK
    trace = _read_json(tmp_path / "knee_VFM1_nm_trace.json")
    assert len(trace) >= 1
    assert set(trace[0]) >= {"iteration", "mcf", "mcm", "alpha_used", "lambda_1"}
    summary = _read_json(tmp_path / "knee_VFM1_nm.json")
    assert summary["method"] == "nm"
    assert summary["evaluations"] <= 60
    assert sum(summary["lambda_star"]) == pytest.approx(1.0)
    assert summary["mcf_star"] == min(point["mcf"] for point in trace)


def test_run_failure(monkeypatch, tmp_path, capsys):
    """Test that library failures exit with code 1."""

    def failing(**kwargs):
        raise GridSolveError("too many failed solves")

    monkeypatch.setattr(apps.cli, "compute_table1", failing)
    config = RunConfig(command="table1", output_dir=str(tmp_path))
    assert run(config) == EXIT_FAILURE
    assert "GridSolveError" in capsys.readouterr().err


def test_dfo_alias_and_seedless():
    """Test that --dfo selects the knee method and --seedless drops the start."""
    args = build_parser().parse_args(
        ["knee", "--problem", "VFM1", "--dfo", "direct", "--seedless"]
    )
    config = config_from_args(args)
    assert config.method == "direct"
    assert config.seedless is True
    assert config.start is None


def test_knee_direct(tmp_path):
    """Test a DIRECT knee search that stops at its budget."""
    argv = ["knee", "--problem", "VFM1", "--dfo", "direct", "--seedless"]
    argv += ["--grid-step", "0.1", "--budget", "30", "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    summary = _read_json(tmp_path / "knee_VFM1_direct.json")
    assert summary["method"] == "direct"
    assert summary["evaluations"] <= 30
    assert (tmp_path / "knee_VFM1_direct_trace.csv").exists()


def test_unwritable_output_dir(tmp_path, capsys):
    """Test that an output path blocked by a file exits with code 2."""
    blocker = tmp_path / "blocker"
    blocker.write_text("", encoding="utf-8")
    for out in (blocker, blocker / "outputs"):
        assert main(["list-problems", "--out", str(out)]) == EXIT_CONFIG
    assert "invalid configuration" in capsys.readouterr().err
    assert os.listdir(tmp_path) == ["blocker"]
