import json
from pathlib import Path

import numpy as np
import pytest

from pinning_dynamics.config import build_config, load_experiments
from pinning_dynamics.experiments.censoring import sampling_tv
from pinning_dynamics.experiments.runner import body_of, run_experiment, status_of
from pinning_dynamics.experiments.spectra_small_l import spectra_cell

EXPERIMENTS_FILE = Path(__file__).resolve().parents[2] / "experiments.json"


def shipped(name, **params):
    settings = load_experiments(EXPERIMENTS_FILE)[name]
    return {**settings, "params": {**settings.get("params", {}), **params}}


def run_and_load(name, settings, out_dir):
    config = build_config(name, settings, {"out_dir": str(out_dir), "timestamp": False})
    response = run_experiment(config)
    body = body_of(response)
    assert status_of(response) == 200, body
    assert body["passed"]
    assert body["config_hash"] == config.content_hash()
    report = json.loads((Path(out_dir) / f"{name}.json").read_text(encoding="utf-8"))
    asserted = [a for a in report["assertions"] if a["kind"] == "asserted"]
    assert asserted and all(a["passed"] for a in asserted)
    return report


def names(report, kind=None):
    return [a["name"] for a in report["assertions"] if kind is None or a["kind"] == kind]


def test_qsd_experiment_end_to_end(tmp_path):
    run_and_load("qsd", {"L": [4], "lambda": [0.5]}, tmp_path)
    assert (tmp_path / "qsd_qsd.csv").exists()
    assert (tmp_path / "qsd_survival.csv").exists()


def test_capacity_bound_gives_400(tmp_path):
    config = build_config("qsd", {"L": [13], "out_dir": str(tmp_path)})
    response = run_experiment(config)
    assert status_of(response) == 400
    assert body_of(response)["bound_name"] == "L_max"


def test_identities_experiment_end_to_end(tmp_path):
    settings = {
        "L": [20],
        "lambda": [0.5],
        "params": {"tail_window": [200, 2000], "oracle_L": [2, 3], "oracle_lambda": [0.5]},
    }
    report = run_and_load("identities", settings, tmp_path)
    assert "closed forms match enumeration exactly" in names(report, "asserted")
    assert "w_wall[6] at lambda=1/2 is 13/256" in names(report, "asserted")


def test_spectra_experiment_runs_the_semigroup_checks(tmp_path):
    settings = {
        "L": [3, 4],
        "lambda": [0.5],
        "params": {"jerrum_L": [3], "sigma_L": [3], "crossing_count_L": [6, 8]},
    }
    report = run_and_load("spectra-small-L", settings, tmp_path)
    asserted = names(report, "asserted")
    for L in (3, 4):
        assert f"T_rel <= T_mix L={L} lambda=0.5" in asserted
        assert f"submultiplicativity L={L} lambda=0.5" in asserted
        assert f"4L^2 extremal bound L={L} lambda=0.5" in asserted
    assert not [n for n in names(report) if "skipped" in n]


def test_shipped_spectra_grid_solves_densely():
    settings = load_experiments(EXPERIMENTS_FILE)["spectra-small-L"]
    assert settings["params"]["mode"] == "dense"
    assert max(settings["L"]) == 8


@pytest.mark.slow
def test_largest_spectra_cell_keeps_the_mixing_checks():
    config = build_config("spectra-small-L", load_experiments(EXPERIMENTS_FILE)["spectra-small-L"])
    outcome = spectra_cell((8, 0.5), config)
    assert outcome["curves"]
    assert outcome["row"][6] == "dense"
    assert np.isfinite(outcome["row"][5])
    checks = {name: passed for name, passed, _, _ in outcome["checks"]}
    assert checks["T_rel <= T_mix L=8 lambda=0.5"]
    assert checks["T_mix <= (1 - log pi_*) T_rel L=8 lambda=0.5"]
    assert checks["submultiplicativity L=8 lambda=0.5"]
    assert checks["4L^2 extremal bound L=8 lambda=0.5"]


def test_sigma_scaling_experiment_end_to_end(tmp_path):
    settings = {"L": [4, 5, 6, 7, 8], "lambda": [0.5], "runs": 200, "params": {"mc_L": []}}
    report = run_and_load("sigma-scaling", settings, tmp_path)
    assert "quotient >= exact sigma gap L=8 lambda=0.5" in names(report, "asserted")
    assert "sigma gap log-log slope lambda=0.5" in names(report, "reported")


def test_crossing_scaling_experiment_end_to_end(tmp_path):
    settings = {
        "L": [64],
        "lambda": [0.5],
        "params": {"k_range": [6, 14], "rho_L": [6, 8], "neq_L": [6], "neq_n_max": 2},
    }
    report = run_and_load("crossing-scaling", settings, tmp_path)
    assert "single-crossing gap log-log slope" in names(report, "asserted")
    assert "gap^(+,n) over L^-2.5 gap_eq positive L=6 n=2 lambda=0.5" in names(report, "asserted")


@pytest.mark.slow
def test_particle_couplings_experiment_end_to_end(tmp_path):
    settings = shipped(
        "particle-couplings",
        gap1_L=[10],
        tail_L=[1000],
        decay_L=12,
        decay_n=[2, 3, 4],
        coupling_L=20,
        epsilon_n=[1, 2],
        block_L=40,
    )
    settings["runs"] = 50
    report = run_and_load("particle-couplings", settings, tmp_path)
    assert "n=2 exact and MC particle gaps within 20% L=20 lambda=0.5" in names(report, "asserted")
    tails = [a for a in report["assertions"] if a["name"].startswith("(n+1) times first segment tail")]
    assert tails and all(a["kind"] == "reported" for a in tails)
    assert all("pre-asymptotic" in a["name"] for a in tails)


@pytest.mark.slow
def test_metastability_experiment_end_to_end(tmp_path):
    settings = shipped("metastability-mc", extra_starts=0, plus_runs=0)
    report = run_and_load("metastability-mc", settings, tmp_path)
    assert "mean tunneling time over 2 T_rel L=10 lambda=0.5" in names(report, "asserted")
    assert "exponential tunneling law L=10 lambda=0.5" in names(report, "asserted")


@pytest.mark.slow
def test_censoring_experiment_end_to_end(tmp_path):
    settings = shipped("censoring", coupling_events=20_000, three_phase=False)
    report = run_and_load("censoring", settings, tmp_path)
    asserted = names(report, "asserted")
    assert "naive and active-set engines share the law L=4 lambda=0.5" in asserted
    assert "naive empirical law at T_rel matches exact L=4 lambda=0.5" in asserted
    assert "active-set empirical law at T_rel matches exact L=4 lambda=0.5" in asserted


def test_sampling_tv_scale():
    assert sampling_tv(np.array([1.0, 0.0]), 100) == 0.0
    uniform = np.full(4, 0.25)
    assert sampling_tv(uniform, 400) == pytest.approx(2.0 * np.sqrt(2.0 * 0.1875 / (np.pi * 400)))
    assert sampling_tv(uniform, 1600) == pytest.approx(0.5 * sampling_tv(uniform, 400))
