import gc
import math
import weakref

import numpy as np
import pytest

from pinning_dynamics.effective import (
    ParticleSystem,
    autocorrelation_gap,
    compositions,
    conditional_particle_law,
    coupling_experiments,
    maximal_positions,
    minimal_positions,
    particle_dynamics,
    particle_equilibration_gap,
    ramp,
    sigma_variational_quotient,
    single_crossing_chain,
    single_crossing_gap,
    staged_marks,
    wilson_interval,
)
from pinning_dynamics.equilibrium import excursion_kernel
from pinning_dynamics.errors import InsufficientDataError, InvalidInputError, OrderViolationError
from pinning_dynamics.rng import stream
from pinning_dynamics.spectral import sigma_heatbath_chain, solve_spectrum


@pytest.fixture(scope="module")
def kernel():
    return excursion_kernel(40, 0.5)


def test_ramp_shape():
    assert ramp(np.array([0.0, 0.25, 0.5, 0.75, 1.0])).tolist() == [-1.0, -1.0, 0.0, 1.0, 1.0]


def test_rho0_chain_rates():
    chain = single_crossing_chain(4, "rho0")
    assert chain.sites.tolist() == [-2, 0, 2]
    assert chain.up.tolist() == [1.0, 1.0]
    assert chain.down[0] == pytest.approx((4.0 / 3.0) ** 1.5)
    assert chain.down[1] == pytest.approx((3.0 / 4.0) ** 1.5)
    assert chain.weights.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("kind", ["rho0", "rho"])
def test_tridiagonal_gap_matches_the_eigensolver(kind):
    chain = single_crossing_chain(8, kind, 0.5)
    reversible = chain.to_chain()
    assert reversible.check_detailed_balance() < 1e-10
    assert chain.gap() == pytest.approx(solve_spectrum(reversible).gap, rel=1e-9)


@pytest.mark.parametrize("L", [16, 256, 4096])
def test_ramp_bounds_the_single_crossing_gap(L):
    result = single_crossing_gap(L)
    assert result.gap > 0
    assert result.bound_ok


def test_single_crossing_input_errors():
    with pytest.raises(InvalidInputError):
        single_crossing_chain(2)
    with pytest.raises(InvalidInputError):
        single_crossing_chain(8, "rho1")


def test_conditional_particle_law(kernel):
    w = kernel.weights
    assert conditional_particle_law(0, 4, kernel).probs.tolist() == [1.0]
    assert conditional_particle_law(-3, 3, kernel).probs.tolist() == pytest.approx([0.5, 0.5])
    law = conditional_particle_law(0, 8, kernel)
    assert law.offsets.tolist() == [2, 4, 6]
    assert law.probs[1] == pytest.approx(w[4] ** 2 / (2 * w[2] * w[6] + w[4] ** 2))
    assert law.from_uniform(0.0) == 2
    assert law.from_uniform(0.999999) == 6


@pytest.mark.parametrize("left, right", [(0, 5), (0, 2), (0, 42)])
def test_conditional_particle_law_errors(kernel, left, right):
    with pytest.raises(InvalidInputError):
        conditional_particle_law(left, right, kernel)


def test_compositions_in_colex_order():
    gaps = compositions(2, 4)
    assert gaps.tolist() == [[4, 2, 2], [2, 4, 2], [2, 2, 4]]
    assert compositions(0, 3).tolist() == [[6]]
    assert len(compositions(3, 10)) == math.comb(9, 3)
    with pytest.raises(InvalidInputError):
        compositions(4, 4)


def test_single_particle_equilibrates_at_rate_one(kernel):
    assert particle_equilibration_gap(1, 10, kernel).gap == pytest.approx(1.0, abs=1e-10)
    assert particle_equilibration_gap(1, 20, kernel).gap == pytest.approx(1.0, abs=1e-10)


def test_particle_gap_shrinks_with_n(kernel):
    two = particle_equilibration_gap(2, 20, kernel)
    three = particle_equilibration_gap(3, 20, kernel)
    assert 0 < three.gap < two.gap < 1.0 + 1e-10
    assert two.n_states == math.comb(19, 2)
    assert two.index(two.gaps[0]) == 0
    with pytest.raises(KeyError):
        two.index((2, 2, 2))


def test_packed_configurations():
    assert minimal_positions(3, 10) == [-8, -6, -4]
    assert maximal_positions(3, 10) == [4, 6, 8]


def test_particle_system_rejects_disordered_positions(kernel):
    with pytest.raises(OrderViolationError):
        ParticleSystem(kernel, 10, [-9])
    with pytest.raises(OrderViolationError):
        ParticleSystem(kernel, 10, [2, 2])


def test_particle_laws_are_memoized_without_pinning_the_system(kernel):
    laws = {}
    first = ParticleSystem(kernel, 10, [0], laws)
    law = first.law(20)
    assert first.law(20) is law
    assert ParticleSystem(kernel, 10, [0], laws).law(20) is law
    assert ParticleSystem(kernel, 10, [0]).law(20) is not law
    alive = weakref.ref(first)
    del first
    gc.collect()
    assert alive() is None
    assert set(laws) == {20}


def test_simulated_particles_stay_ordered(kernel):
    trajectory = particle_dynamics(3, 10, kernel, mode="simulate", horizon=20.0, seed=4, sample_dt=0.5)
    assert trajectory.events > 0
    assert len(trajectory.samples) == 41
    assert all(s >= 4 for s in trajectory.spans)
    with pytest.raises(InvalidInputError):
        particle_dynamics(3, 10, kernel, mode="replay")


def test_autocorrelation_gap_of_an_ar1_series():
    dt, rate = 0.1, 1.0
    rho = math.exp(-rate * dt)
    noise = stream(0).standard_normal(100000) * math.sqrt(1 - rho ** 2)
    x = np.empty(len(noise))
    x[0] = noise[0]
    for k in range(1, len(x)):
        x[k] = rho * x[k - 1] + noise[k]
    assert autocorrelation_gap(x, dt) == pytest.approx(rate, rel=0.2)


def test_autocorrelation_needs_data():
    with pytest.raises(InsufficientDataError):
        autocorrelation_gap(np.arange(10.0), 0.1)
    with pytest.raises(InsufficientDataError):
        autocorrelation_gap(np.ones(100), 0.1)


def test_wilson_interval():
    low, high = wilson_interval(5, 10)
    assert low < 0.5 < high
    assert wilson_interval(0, 10)[0] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(InvalidInputError):
        wilson_interval(0, 0)


def test_staged_marks():
    assert staged_marks(3) == [3, 2, 1, 2, 3]
    assert staged_marks(1) == [1]


def test_coupling_statistics(kernel):
    first = coupling_experiments(1, 10, kernel, "epsilon1", n_runs=50, seed=2)
    assert 0 <= first.probability <= 1
    assert first.wilson[0] <= first.probability <= first.wilson[1]
    assert first.details["alpha_full"] == pytest.approx(conditional_particle_law(-10, 10, kernel).alpha)
    assert 0 <= first.details["first_ring_rate"] <= first.probability

    block = coupling_experiments(2, 10, kernel, "block", n_runs=50, seed=2, K=1, delta=2)
    assert block.details["K"] == 1 and block.details["delta"] == 2
    assert 0 <= block.details["staged_probability"] <= 1
    with pytest.raises(InvalidInputError):
        coupling_experiments(3, 10, kernel, "block", n_runs=5, seed=2, K=2, delta=2)
    with pytest.raises(InvalidInputError):
        coupling_experiments(2, 10, kernel, "glauber", n_runs=5, seed=2)


@pytest.mark.parametrize("L", [4, 6, 8])
def test_sign_quotient_bounds_the_sign_gap(L):
    quotient = sigma_variational_quotient(L, 0.5, backend="exact")
    gap = solve_spectrum(sigma_heatbath_chain(L, 0.5)).gap
    assert quotient.quotient >= gap * (1.0 - 1e-9)
    assert 0 < quotient.middle_mass < 1


def test_sign_quotient_backend_errors():
    with pytest.raises(InvalidInputError):
        sigma_variational_quotient(20, 0.5, n_mc=1, backend="mc")
    with pytest.raises(InvalidInputError):
        sigma_variational_quotient(6, 0.5, backend="lanczos")


@pytest.mark.slow
def test_monte_carlo_quotient_agrees_with_enumeration():
    exact = sigma_variational_quotient(8, 0.5, backend="exact")
    mc = sigma_variational_quotient(8, 0.5, n_mc=4000, seed=1, backend="mc")
    assert abs(mc.quotient / exact.quotient - 1.0) < 3 * mc.relative_error + 0.05
