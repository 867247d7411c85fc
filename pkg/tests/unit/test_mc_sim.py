import numpy as np
import pytest

from pinning_dynamics.errors import InvalidInputError, ScheduleError
from pinning_dynamics.mc_sim import (
    CensoringSchedule,
    CensoringWindow,
    DynamicsSpec,
    censored_run,
    extremal_pair,
    gap_estimate_from_coalescence,
    grand_coupling_run,
    hitting_time_sample,
    make_target,
    parse_schedule,
    simulate_heatbath,
    three_phase_schedule,
)
from pinning_dynamics.polymer_core import BoundaryPair, leq, maximal_path, minimal_path, omega_plus_floor
from pinning_dynamics.spectral import build_generator, evolve, point_mass, solve_spectrum, total_variation


def test_invalid_dynamics_specs():
    with pytest.raises(InvalidInputError):
        DynamicsSpec(4, 0.5, engine="gillespie")
    with pytest.raises(InvalidInputError):
        DynamicsSpec(4, -0.5)
    with pytest.raises(InvalidInputError):
        DynamicsSpec(4, 0.5, bounds=BoundaryPair.free(5))


def test_runs_are_reproducible_from_the_seed():
    spec = DynamicsSpec(5, 0.5)
    first = simulate_heatbath(spec, maximal_path(5), 20.0, seed=42, record_events=True)
    second = simulate_heatbath(spec, maximal_path(5), 20.0, seed=42, record_events=True)
    other = simulate_heatbath(spec, maximal_path(5), 20.0, seed=42, replica=1, record_events=True)
    assert first.event_times == second.event_times
    assert first.event_sites == second.event_sites
    assert first.final == second.final
    assert first.event_times != other.event_times
    assert first.flips == len(first.event_times)


def test_observables_are_sampled_on_the_grid():
    spec = DynamicsSpec(3, 0.5)
    record = simulate_heatbath(spec, maximal_path(3), 5.0, seed=1, observables=["height_sum", "zeros"], sample_times=[0.0, 1.0, 2.0])
    assert len(record.samples["height_sum"]) == 3
    assert record.samples["height_sum"][0] == 9.0
    assert record.samples["zeros"][0] == 0.0
    with pytest.raises(InvalidInputError):
        simulate_heatbath(spec, maximal_path(3), 5.0, seed=1, observables=["energy"])


@pytest.mark.parametrize("engine", ["naive", "active-set"])
def test_bounded_runs_stay_inside_the_bounds(engine):
    L = 6
    bounds = BoundaryPair(omega_plus_floor(L, 1), maximal_path(L))
    spec = DynamicsSpec(L, 0.5, bounds=bounds, engine=engine)
    record = simulate_heatbath(spec, maximal_path(L), 200.0, seed=9)
    assert bounds.contains(record.final)
    assert record.engine == engine


def test_null_censoring_reproduces_the_free_run():
    L = 6
    spec = DynamicsSpec(L, 0.5)
    schedule = parse_schedule([{"start": 0, "end": 50, "sites": None}])
    censored = censored_run(spec, schedule, maximal_path(L), seed=7, record_events=True)
    free = simulate_heatbath(spec, maximal_path(L), 50.0, seed=7, record_events=True)
    assert censored.final == free.final
    assert censored.event_times == free.event_times
    assert censored.event_sites == free.event_sites


def test_censored_site_never_moves():
    L = 6
    spec = DynamicsSpec(L, 0.5)
    sites = [x for x in range(-L + 1, L) if x != 0]
    schedule = parse_schedule([{"start": 0, "end": 100, "sites": sites}])
    record = censored_run(spec, schedule, maximal_path(L), seed=2)
    assert record.site_flips.get(0, 0) == 0
    assert record.final.height(0) == L
    assert record.flips > 0


@pytest.mark.parametrize(
    "windows",
    [
        [CensoringWindow(0.0, 2.0), CensoringWindow(1.0, 3.0)],
        [CensoringWindow(0.0, 1.0), CensoringWindow(2.0, 3.0)],
        [CensoringWindow(1.0, 2.0)],
        [CensoringWindow(0.0, 0.0)],
        [],
    ],
)
def test_invalid_schedules(windows):
    with pytest.raises(ScheduleError):
        CensoringSchedule(windows)


def test_three_phase_schedule_layout():
    L = 12
    schedule = three_phase_schedule(L, ell=2, eps1=0.5)
    first, middle, last = schedule.windows
    assert first.end == pytest.approx(L ** 2.5)
    assert middle.end - middle.start == pytest.approx(L ** 0.5)
    assert schedule.horizon == pytest.approx(2 * L ** 2.5 + L ** 0.5)
    assert first.sites == last.sites
    assert 0 in first.sites and 0 not in middle.sites
    assert -L + 1 in middle.sites and L - 1 in middle.sites


def test_grand_coupling_keeps_order():
    L = 5
    spec = DynamicsSpec(L, 0.5)
    bottom, top = extremal_pair(spec)
    run = grand_coupling_run(spec, [bottom, top], 500.0, seed=4, sample_times=np.linspace(0, 500, 11), stop_at_coalescence=False)
    assert (0, 1) in run.ordered_pairs
    assert all(run.order_flags)
    assert leq(run.final[0], run.final[1])
    assert run.order_checks > 0
    if run.coalescence_time is not None:
        assert run.final[0] == run.final[1]


def test_identical_replicas_coalesce_at_time_zero():
    spec = DynamicsSpec(4, 0.5)
    run = grand_coupling_run(spec, [maximal_path(4), maximal_path(4)], 10.0, seed=1)
    assert run.coalescence_time == 0.0
    with pytest.raises(InvalidInputError):
        grand_coupling_run(DynamicsSpec(4, 0.5, restrict_o=1.0), [maximal_path(4)], 10.0, seed=1)


def test_hitting_sample_flags_censored_runs():
    spec = DynamicsSpec(3, 0.5)
    target = make_target("omega-minus", 3, ell=1)
    short = hitting_time_sample(spec, maximal_path(3), target, n_runs=5, seed=3, horizon=1e-6)
    assert short.censored_count == 5
    assert np.all(short.times == 1e-6)
    assert np.isnan(short.mean_uncensored)

    long = hitting_time_sample(spec, maximal_path(3), target, n_runs=50, seed=3, horizon=1e5)
    assert long.censored_count == 0
    times, survival = long.kaplan_meier()
    assert np.all(np.diff(survival) <= 0)
    assert survival[-1] == pytest.approx(0.0)
    assert long.rate_mle == pytest.approx(1.0 / long.mean_uncensored)


def test_target_already_reached_at_start():
    spec = DynamicsSpec(3, 0.5)
    record = simulate_heatbath(spec, minimal_path(3), 10.0, seed=0, target=make_target("omega-minus", 3, ell=1))
    assert record.hitting_time == 0.0
    assert not record.censored
    with pytest.raises(InvalidInputError):
        make_target("s0-minus", 3)


@pytest.mark.slow
def test_coalescence_gap_estimate_is_positive():
    spec = DynamicsSpec(3, 0.5)
    estimate = gap_estimate_from_coalescence(spec, horizon=60.0, n_runs=400, seed=5)
    assert estimate.gap > 0
    assert estimate.low <= estimate.gap <= estimate.high


@pytest.mark.slow
@pytest.mark.parametrize("engine", ["naive", "active-set"])
def test_simulated_law_matches_the_exact_semigroup(engine):
    L, lam, t, runs = 3, 0.5, 1.0, 40_000
    chain = build_generator(L, lam)
    exact = solve_spectrum(chain, mode="dense")
    top = maximal_path(L)
    law = evolve(chain, exact, point_mass(chain, chain.space.index(top)), [t])[0]
    spec = DynamicsSpec(L, lam, engine=engine)
    counts = np.zeros(chain.n_states)
    for r in range(runs):
        record = simulate_heatbath(spec, top, t, seed=17, replica=r)
        counts[chain.space.index(record.final)] += 1
    assert total_variation(counts / runs, law) < 0.02
