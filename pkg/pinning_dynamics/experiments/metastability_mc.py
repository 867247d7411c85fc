# pinning_dynamics/experiments/metastability_mc.py

import logging
import math

import numpy as np

from pinning_dynamics.config import ExperimentConfig
from pinning_dynamics.equilibrium import sample_equilibrium
from pinning_dynamics.errors import InsufficientDataError
from pinning_dynamics.experiments.common import handle
from pinning_dynamics.mc_sim import DynamicsSpec, PhaseSet, hitting_time_sample, make_target, simulate_heatbath
from pinning_dynamics.polymer_core import classify_heights, maximal_path
from pinning_dynamics.reporting import Report
from pinning_dynamics.rng import stream
from pinning_dynamics.spectral import build_generator, mixing_profile, sign_sets, solve_spectrum

logger = logging.getLogger()
logger.setLevel(logging.INFO)


def _tunneling(config: ExperimentConfig, report: Report, L: int, lam: float, chain, result, sets):
    params = config.params
    seed = config.seeds[0]
    ell = config.ell_for(L)
    spec = DynamicsSpec(L, lam, ell=ell, engine=params.get("engine", "active-set"))
    target_name = params.get("target", "s0-minus")
    keys = chain.keys[sets.minus] if target_name == "s0-minus" else None
    target = make_target(target_name, L, ell, keys)
    horizon = config.horizon or 20.0 * result.t_rel
    top = maximal_path(L)

    sample = hitting_time_sample(spec, top, target, config.runs, seed, horizon, occupation=PhaseSet("neither", L, ell))
    two_t_rel = 2.0 * result.t_rel
    report.add_rows(
        "hitting",
        ["start", "run", "time", "censored", "time_outside_phases"],
        [("top", r, t, c, o) for r, (t, c, o) in enumerate(zip(sample.times, sample.censored, sample.occupation))],
    )
    km_t, km_s = sample.kaplan_meier()
    report.add_rows("kaplan_meier", ["t", "survival"], list(zip(km_t, km_s)))
    tag = f"L={L} lambda={lam}"
    report.within(f"mean tunneling time over 2 T_rel {tag}", sample.mean_uncensored / two_t_rel, (0.85, 1.15))
    try:
        p_value = sample.ks_pvalue()
    except InsufficientDataError as e:
        logger.warning(f"{tag}: {e}")
        p_value = math.nan
    report.check(f"exponential tunneling law {tag}", p_value > 0.01, p_value, (0.01, 1.0))
    hit = ~sample.censored
    outside = float(sample.occupation[hit].mean() / sample.times[hit].mean()) if hit.any() else math.nan
    report.within(f"time outside the phases over tunneling time {tag}", outside, (0.0, 0.1), asserted=False)
    if sample.censored_count:
        report.note(f"censored tunneling runs {tag}", False, sample.censored_count)
    report.results.update(
        {
            "seed": seed,
            "n_runs": sample.n_runs,
            "tau_mean": sample.mean_uncensored,
            "tau_ks_p": p_value,
            "censored_count": sample.censored_count,
            "rate_mle": sample.rate_mle,
            "target": sample.target,
            "t_rel": result.t_rel,
        }
    )

    extra = int(params.get("extra_starts", 0))
    if extra:
        rng = stream(seed, config.runs + 1)
        starts = sample_equilibrium(
            L, lam, rng, size=extra, condition=lambda h: classify_heights(h, ell, None)[0], L_max=config.L_max
        )
        per_start = int(params.get("extra_runs", 100))
        for k, start in enumerate(starts):
            other = hitting_time_sample(spec, start, target, per_start, seed + k + 1, horizon)
            report.add_rows("start_means", ["start", "mean_over_2t_rel", "censored"], [(start.to_string(), other.mean_uncensored / two_t_rel, other.censored_count)])

    plus_runs = int(params.get("plus_runs", 0))
    if plus_runs:
        t_plus = max(L ** 2.5 / math.log(L) ** 9, 1.0)
        times = np.linspace(0.0, t_plus, 11)
        inside = np.zeros(len(times))
        free = DynamicsSpec(L, lam, ell=ell)
        for r in range(plus_runs):
            record = simulate_heatbath(free, top, t_plus, seed, observables=["in_plus"], sample_times=times, replica=r)
            inside += np.asarray(record.samples["in_plus"])
        fraction = inside / plus_runs
        report.add_rows("stay_in_plus", ["t", "fraction_in_plus"], list(zip(times, fraction)))
        report.within(f"fraction in Omega^+ from the top {tag}", float(fraction.min()), (0.9, 1.0), asserted=False)


def _profile(config: ExperimentConfig, report: Report, L: int, lam: float, chain, result, sets):
    t_start = L ** 2.2
    t_end = max(5.0 * result.t_rel, 2.0 * t_start)
    times = np.linspace(t_start, t_end, int(config.params.get("profile_points", 40)))
    profile = mixing_profile(chain, result, sets.plus, sets.minus, times, epsilon=0.05)
    report.add_rows("profile", ["L", "lambda", "t", "distance"], [(L, lam, t, d) for t, d in zip(profile.times, profile.distance)])
    tag = f"L={L} lambda={lam}"
    report.within(f"distance to the two-phase mixture after L^2.2 {tag}", profile.sup_distance, (0.0, 0.15))
    report.within(f"T_mix(0.05) over T_rel log 10 {tag}", profile.t_mix_ratio, (0.5, 1.5), asserted=False)
    report.results["t_mix_start"] = profile.t_mix_start


def run(config: ExperimentConfig, report: Report):
    for L in config.L:
        for lam in config.lam:
            chain = build_generator(L, lam, ell=config.ell_for(L), L_max=config.L_max)
            result = solve_spectrum(chain, dense_limit=config.dense_limit)
            sets = sign_sets(result, config.tolerances.sign_band)
            _tunneling(config, report, L, lam, chain, result, sets)
            if config.params.get("profile", True):
                _profile(config, report, L, lam, chain, result, sets)


def handler(event, context=None):
    return handle(event, "metastability-mc", run)
