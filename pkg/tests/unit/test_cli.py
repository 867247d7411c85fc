import json

import pytest

from app import EXIT_CODES, build_parser, main
from pinning_dynamics.config import EXPERIMENT_NAMES
from pinning_dynamics.experiments import qsd
from pinning_dynamics.experiments.runner import HANDLERS, body_of, handler, status_of
from pinning_dynamics.reporting import write_csv


def test_parser_defaults_and_aliases():
    args = build_parser().parse_args(["tunnel", "--L", "10", "--lambda", "0.5", "--target", "omega-minus"])
    assert args.L == [10]
    assert args.lam == [0.5]
    assert args.target == "omega-minus"
    args = build_parser().parse_args(["gap", "--chain", "sigma"])
    assert args.mode == "auto"
    with pytest.raises(SystemExit):
        build_parser().parse_args(["run", "--experiment", "annealing"])


def test_exit_codes():
    assert EXIT_CODES == {200: 0, 417: 1, 500: 1, 400: 2}


@pytest.fixture
def gap_file(tmp_path):
    path = tmp_path / "gaps.csv"
    rows = [(L, L ** -2.5, "rho0") for L in (64, 128, 256, 512, 1024)]
    write_csv(path, ["L", "gap", "method"], rows, None, "0" * 40)
    return path


def test_scaling_command(gap_file, capsys):
    assert main(["scaling", str(gap_file), "--band", "-2.6", "-2.4"]) == 0
    assert json.loads(capsys.readouterr().out)["slope"] == pytest.approx(-2.5)
    assert main(["scaling", str(gap_file), "--band", "-2.0", "-1.0"]) == 1
    assert main(["scaling", str(gap_file), "--where", "method=rho"]) == 1


def test_gap_command(capsys):
    assert main(["gap", "--chain", "single-crossing", "--L", "64"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["gap"] <= summary["ramp_bound"]
    assert main(["gap", "--chain", "path", "--L", "3", "--lambda", "0.5"]) == 0
    assert json.loads(capsys.readouterr().out)["n_states"] == 20


def test_usage_and_capacity_errors_exit_with_two():
    assert main(["gap", "--chain", "path", "--L", "13"]) == 2
    assert main(["gap", "--L", "4", "6"]) == 2


def test_enumerate_command(tmp_path, capsys):
    assert main(["enumerate", "--L", "3", "--out", str(tmp_path), "--no-timestamp"]) == 0
    lines = (tmp_path / "enumerate_L3.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("# config_hash=")
    assert lines[1] == "path,pi,zeros,crossings,sign_key"
    assert len(lines) == 2 + 20


def test_simulate_command(tmp_path, capsys):
    argv = ["simulate", "--L", "4", "--seed", "3", "--horizon", "5", "--samples", "10", "--out", str(tmp_path), "--no-timestamp"]
    assert main(argv) == 0
    first = (tmp_path / "trajectory_L4_seed3.csv").read_bytes()
    assert main(argv) == 0
    assert (tmp_path / "trajectory_L4_seed3.csv").read_bytes() == first
    samples = (tmp_path / "trajectory_L4_seed3_samples.csv").read_text(encoding="utf-8").splitlines()
    assert samples[1] == "t,height_sum"
    assert len(samples) == 2 + 11


def test_runner_routes_every_experiment():
    assert set(HANDLERS) == set(EXPERIMENT_NAMES)


def test_runner_rejects_bad_events():
    response = handler("{not json")
    assert status_of(response) == 400
    assert "error" in body_of(response)
    assert status_of(handler({"experiment": "annealing"})) == 400
    assert status_of(handler({"experiment": "qsd", "L": [0]})) == 400


def test_handler_rejects_another_experiment():
    assert status_of(qsd.handler({"experiment": "identities"})) == 400
