# pinning_dynamics/experiments/censoring.py

import logging
import math

import numpy as np
from scipy import stats

from pinning_dynamics.config import ExperimentConfig
from pinning_dynamics.equilibrium import sample_equilibrium
from pinning_dynamics.errors import InsufficientDataError, OrderViolationError
from pinning_dynamics.experiments.common import handle
from pinning_dynamics.mc_sim import (
    DynamicsSpec,
    censored_run,
    extremal_pair,
    gap_estimate_from_coalescence,
    grand_coupling_run,
    parse_schedule,
    simulate_heatbath,
    three_phase_schedule,
)
from pinning_dynamics.polymer_core import leq, maximal_path, omega_plus_floor
from pinning_dynamics.reporting import Report
from pinning_dynamics.rng import stream
from pinning_dynamics.spectral import build_generator, evolve, point_mass, solve_spectrum, total_variation

logger = logging.getLogger()
logger.setLevel(logging.INFO)


def _three_phase(config: ExperimentConfig, report: Report, lam: float):
    """Σ_x η_x at the end of the three-phase schedule from ∧ against the free run from ζ(Ω^+)."""
    params = config.params
    seed = config.seeds[0]
    L = int(params.get("censor_L", 12))
    ell = config.ell_for(L)
    schedule = three_phase_schedule(L, ell, eps1=float(params.get("eps1", 0.5)))
    T = schedule.horizon
    spec = DynamicsSpec(L, lam, ell=ell)
    runs = int(params.get("censor_runs", 200))
    censored = np.empty(runs)
    free = np.empty(runs)
    floor = omega_plus_floor(L, ell)
    for r in range(runs):
        censored[r] = censored_run(spec, schedule, maximal_path(L), seed, ["height_sum"], [T], replica=r).samples["height_sum"][0]
        free[r] = simulate_heatbath(spec, floor, T, seed + 1, ["height_sum"], [T], replica=r).samples["height_sum"][0]
    grid = np.unique(np.concatenate([censored, free]))
    f_cens = (censored[None, :] <= grid[:, None]).mean(axis=1)
    f_free = (free[None, :] <= grid[:, None]).mean(axis=1)
    sigma = np.sqrt((f_cens * (1 - f_cens) + f_free * (1 - f_free)) / runs)
    excess = float(np.max(f_cens - f_free - 3.0 * sigma))
    report.add_rows(
        "three_phase_cdf",
        ["L", "lambda", "height_sum", "cdf_censored", "cdf_free"],
        [(L, lam, h, a, b) for h, a, b in zip(grid, f_cens, f_free)],
    )
    report.note(f"censored height sum dominates the free run from the Omega^+ floor L={L} lambda={lam}", excess <= 0.0, excess)


def _null_and_frozen(config: ExperimentConfig, report: Report, lam: float):
    seed = config.seeds[0]
    L = int(config.params.get("null_L", 8))
    spec = DynamicsSpec(L, lam)
    T = float(config.params.get("null_horizon", 50.0))
    top = maximal_path(L)
    everything = parse_schedule([{"start": 0.0, "end": T, "sites": None}])
    a = censored_run(spec, everything, top, seed, record_events=True)
    b = simulate_heatbath(spec, top, T, seed, record_events=True)
    same = a.final == b.final and a.event_times == b.event_times and a.event_sites == b.event_sites
    report.check(f"null censoring reproduces the free trajectory L={L} lambda={lam}", same, a.flips - b.flips)

    frozen_x = int(config.params.get("frozen_site", 0))
    others = [x for x in range(-L + 1, L) if x != frozen_x]
    schedule = parse_schedule([{"start": 0.0, "end": T, "sites": others}])
    record = censored_run(spec, schedule, top, seed)
    flips = record.site_flips.get(frozen_x, 0)
    report.check(f"censored site {frozen_x} never flips L={L} lambda={lam}", flips == 0, flips, (0, 0))


def _grand_coupling(config: ExperimentConfig, report: Report, lam: float):
    params = config.params
    seed = config.seeds[0]
    L = int(params.get("coupling_L", 8))
    spec = DynamicsSpec(L, lam)
    bottom, top = extremal_pair(spec)
    middle = sample_equilibrium(L, lam, stream(seed, 1 << 20), size=int(params.get("extra_replicas", 4)), L_max=config.L_max)
    initial = [bottom, top] + middle
    target = int(params.get("coupling_events", 1_000_000))
    events = checks = 0
    replica = 0
    violation = None
    horizon = target / (2 * L - 1)
    times = np.linspace(0.0, horizon, 101)[1:]
    coalesced = np.zeros(len(times))
    try:
        while events < target:
            run = grand_coupling_run(spec, initial, horizon, seed, replica=replica, sample_times=times, stop_at_coalescence=False)
            events += run.events
            checks += run.order_checks
            coalesced += np.asarray(run.coalesced_flags[: len(times)], dtype=float)
            replica += 1
    except OrderViolationError as e:
        violation = str(e)
    report.check(f"grand coupling keeps order over {events} events L={L} lambda={lam}", violation is None, violation or checks)
    coalesced /= max(replica, 1)
    report.note(
        f"coalescence probability nondecreasing in t L={L} lambda={lam}",
        bool(np.all(np.diff(coalesced) >= 0)),
        float(coalesced[-1]),
    )
    ordered = sum(1 for i in initial for j in initial if i is not j and leq(i, j))
    report.results.update({"coupling_events": events, "order_checks": checks, "ordered_pairs": ordered})


def _gap_estimate(config: ExperimentConfig, report: Report, lam: float):
    params = config.params
    L = int(params.get("gap_L", 8))
    chain = build_generator(L, lam, L_max=config.L_max)
    exact = solve_spectrum(chain, dense_limit=config.dense_limit)
    spec = DynamicsSpec(L, lam)
    horizon = config.horizon or float(params.get("gap_horizon_t_rel", 8.0)) * exact.t_rel
    tag = f"L={L} lambda={lam}"
    try:
        estimate = gap_estimate_from_coalescence(spec, horizon, int(params.get("gap_runs", 1000)), config.seeds[0])
    except InsufficientDataError as e:
        logger.error(f"{tag}: {e}")
        report.check(f"coalescence gap estimate within 25% of exact {tag}", False, str(e))
        return
    report.add_rows(
        "gap_estimate",
        ["L", "lambda", "exact", "estimate", "low", "high", "n_points", "censored"],
        [(L, lam, exact.gap, estimate.gap, estimate.low, estimate.high, estimate.n_points, estimate.censored)],
    )
    report.add_rows(
        "coalescence_survival",
        ["L", "lambda", "t", "survival"],
        [(L, lam, t, s) for t, s in zip(estimate.times, estimate.survival)],
    )
    report.within(f"coalescence gap estimate within 25% of exact {tag}", estimate.gap / exact.gap, (0.75, 1.25))


def sampling_tv(law: np.ndarray, runs: int) -> float:
    """Expected TV distance between a law and the empirical law of `runs` independent draws from it."""
    p = np.clip(np.asarray(law, dtype=np.float64), 0.0, 1.0)
    return float(0.5 * np.sum(np.sqrt(2.0 * p * (1.0 - p) / (math.pi * runs))))


def _engines(config: ExperimentConfig, report: Report, lam: float):
    """Naive and active-set engines against each other, and both laws against exact ν_t at small L."""
    params = config.params
    seed = config.seeds[0]
    L = int(params.get("engine_L", 4))
    chain = build_generator(L, lam, L_max=config.L_max)
    exact = solve_spectrum(chain, dense_limit=config.dense_limit)
    t = exact.t_rel
    top = maximal_path(L)
    runs = int(params.get("engine_runs", 10_000))
    naive = DynamicsSpec(L, lam, engine="naive")
    active = naive.with_engine("active-set")
    mid_naive = np.empty(runs)
    mid_active = np.empty(runs)
    counts = np.zeros((2, chain.n_states))
    for r in range(runs):
        a = simulate_heatbath(naive, top, t, seed, ["height_mid"], [t], replica=r)
        b = simulate_heatbath(active, top, t, seed + 1, ["height_mid"], [t], replica=r)
        mid_naive[r] = a.samples["height_mid"][0]
        mid_active[r] = b.samples["height_mid"][0]
        counts[0, chain.space.index(a.final)] += 1
        counts[1, chain.space.index(b.final)] += 1
    p_value = float(stats.ks_2samp(mid_naive, mid_active).pvalue)
    law = evolve(chain, exact, point_mass(chain, chain.space.index(top)), [t])[0]
    tv = [float(v) for v in total_variation(counts / runs, law[None, :])]
    tag = f"L={L} lambda={lam}"
    report.add_rows("engines", ["L", "lambda", "t", "runs", "ks_p", "tv_naive", "tv_active"], [(L, lam, t, runs, p_value, *tv)])
    report.within(f"naive and active-set engines share the law {tag}", p_value, (0.01, 1.0))
    bound = max(0.02, 2.0 * sampling_tv(law, runs))
    for engine, distance in zip(("naive", "active-set"), tv):
        report.within(f"{engine} empirical law at T_rel matches exact {tag}", distance, (0.0, bound))


def run(config: ExperimentConfig, report: Report):
    for lam in config.lam:
        _null_and_frozen(config, report, lam)
        _grand_coupling(config, report, lam)
        _gap_estimate(config, report, lam)
        if config.params.get("engines", True):
            _engines(config, report, lam)
        if config.params.get("three_phase", True):
            _three_phase(config, report, lam)


def handler(event, context=None):
    return handle(event, "censoring", run)
