import math

import numpy as np
import pytest
import scipy.sparse as sp

from pinning_dynamics.equilibrium import pi_marginals
from pinning_dynamics.errors import CapacityError, InvalidInputError
from pinning_dynamics.polymer_core import sign_class_keys
from pinning_dynamics.spectral import (
    ReversibleChain,
    build_generator,
    crossing_count_chain,
    evolve,
    extremal_distance,
    jerrum_bound,
    point_mass,
    projected_sigma_chain,
    qsd_analysis,
    sigma_heatbath_chain,
    sign_sets,
    solve_spectrum,
    tv_and_mixing,
)


@pytest.fixture(scope="module")
def small_chain():
    return build_generator(4, 0.5)


@pytest.fixture(scope="module")
def small_result(small_chain):
    return solve_spectrum(small_chain, mode="dense")


def test_generator_is_reversible(small_chain):
    assert small_chain.check_detailed_balance() < 1e-12
    assert small_chain.row_sum_defect() < 1e-12
    assert small_chain.n_states == math.comb(8, 4)
    assert small_chain.reference_index == small_chain.n_states - 1


def test_two_state_gap():
    rates = sp.csr_matrix(np.array([[0.0, 1.0], [3.0, 0.0]]))
    chain = ReversibleChain(rates=rates, weights=np.array([3.0, 1.0]), label="two-state")
    result = solve_spectrum(chain)
    assert result.gap == pytest.approx(4.0)
    assert result.g[1] > 0 > result.g[0]


def test_principal_eigenfunction_is_antisymmetric_and_monotone(small_chain, small_result):
    g = small_result.g
    assert g[small_chain.reference_index] > 0
    assert np.allclose(g[small_chain.mirror], -g, atol=1e-9)
    h = small_chain.space.heights
    below = np.all(h[:, None, :] <= h[None, :, :], axis=2)
    assert np.all((g[:, None] <= g[None, :] + 1e-9) | ~below)


def test_dense_and_sparse_gaps_agree():
    chain = build_generator(5, 0.3)
    dense = solve_spectrum(chain, mode="dense")
    sparse = solve_spectrum(chain, mode="sparse")
    assert sparse.gap == pytest.approx(dense.gap, rel=1e-8)


def test_dense_solve_is_capacity_bounded(small_chain):
    with pytest.raises(CapacityError) as excinfo:
        solve_spectrum(small_chain, mode="dense", dense_limit=10)
    assert excinfo.value.bound_name == "DENSE_STATE_LIMIT"
    with pytest.raises(InvalidInputError):
        solve_spectrum(small_chain, mode="lanczos")


def test_eigen_expansion_matches_matrix_exponential(small_chain, small_result):
    mu = point_mass(small_chain, 0)
    times = [0.0, 0.5, 3.0]
    by_modes = evolve(small_chain, small_result, mu, times)
    by_expm = evolve(small_chain, None, mu, times)
    assert np.allclose(by_modes, by_expm, atol=1e-10)
    assert np.allclose(by_modes.sum(axis=1), 1.0)


def test_mixing_time_sandwich(small_chain, small_result):
    report = tv_and_mixing(small_chain, small_result)
    assert report.lower_ok and report.upper_ok
    assert report.tv[0] > report.tv[-1]
    distance = extremal_distance(small_chain, small_result, [0.0, small_result.t_rel, 10 * small_result.t_rel])
    assert distance[0] == pytest.approx(1.0)
    assert distance[0] > distance[1] > distance[2]


def test_sign_chain_rates_at_two_sites():
    heatbath = sigma_heatbath_chain(2, 0.5)
    rates = heatbath.rates.toarray()
    # keys: first site is the most significant bit, 1 means plus
    assert rates[0b11, 0b10] == pytest.approx(0.25)
    assert rates[0b10, 0b11] == pytest.approx(0.75)

    projected = projected_sigma_chain(2, 0.5)
    rates = projected.rates.toarray()
    assert rates[0b11, 0b10] == pytest.approx(1.0 / 6.0)
    assert rates[0b10, 0b11] == pytest.approx(0.5)
    assert projected.check_detailed_balance() < 1e-12


def test_crossing_count_chain_stationary_law():
    chain = crossing_count_chain(3, 0.5)
    assert chain.keys.tolist() == [0, 1, 2]
    assert np.allclose(chain.pi, [0.65, 0.30, 0.05])
    expected = np.array(pi_marginals(6, 0.5).crossing_law)
    assert np.allclose(crossing_count_chain(6, 0.5).pi, expected / expected.sum())


def test_quasi_stationary_law_decays_exponentially(small_chain, small_result):
    sets = sign_sets(small_result)
    killed = qsd_analysis(small_chain, sets.minus)
    times = [0.0, 1.0, 5.0]
    assert np.allclose(killed.survival(killed.qsd, times), np.exp(-killed.gamma * np.array(times)), rtol=1e-8)
    assert np.all(killed.qsd[sets.minus] == 0)
    assert killed.qsd.sum() == pytest.approx(1.0)
    assert np.all(killed.hitting_times[sets.minus] == 0)
    assert np.all(killed.hitting_times[~sets.minus] > 0)
    with pytest.raises(InvalidInputError):
        qsd_analysis(small_chain, np.zeros(small_chain.n_states, dtype=bool))


def test_jerrum_bound_holds_for_sign_classes(small_chain, small_result):
    report = jerrum_bound(small_chain, sign_class_keys(small_chain.space), small_result)
    assert report.holds
    assert report.bound > 0
