from fractions import Fraction

import numpy as np
import pytest

from pinning_dynamics.equilibrium import (
    CrossingSampler,
    excursion_kernel,
    enumeration_probability,
    first_segment_tail,
    nu_n_marginals,
    partition_functions,
    pi_marginals,
    reflection_defect,
    sample_equilibrium,
    segment_tables,
    sigma_flip_probability,
    sigma_weight,
    tail_fit,
    wall_normalizer,
    wall_weights,
)
from pinning_dynamics.errors import CapacityError, InvalidInputError
from pinning_dynamics.polymer_core import CrossingConfig, classify_heights, zero_crossing_arrays
from pinning_dynamics.rng import stream

HALF = Fraction(1, 2)


def test_wall_weights_small_lengths():
    w = wall_weights(6, HALF, exact=True)
    assert w[0] == 1
    assert w[2] == Fraction(1, 4)
    assert w[4] == Fraction(3, 32)
    assert w[6] == Fraction(13, 256)


def test_partition_functions_unscaled():
    table = partition_functions(3, HALF, exact=True)
    assert table.z_free(4) == 2 + 4 * HALF
    assert table.z_wall(6) == 2 + 2 * HALF + HALF ** 2
    assert table.z_free(6) == 10
    with pytest.raises(InvalidInputError):
        table.z_wall_capped(6)


def test_reflection_identity_is_exact():
    assert reflection_defect(40, HALF, exact=True) == 0
    assert reflection_defect(400, 0.3) < 1e-12


def test_exact_tables_are_capacity_bounded():
    with pytest.raises(CapacityError):
        partition_functions(13, HALF, exact=True)


def test_zero_and_crossing_laws_in_closed_form():
    small = pi_marginals(2, HALF, exact=True)
    assert small.zero_prob[0] == HALF

    marginals = pi_marginals(3, HALF, exact=True)
    assert marginals.crossing_law == [Fraction(13, 20), Fraction(3, 10), Fraction(1, 20)]
    assert sum(marginals.crossing_law) == 1


@pytest.mark.parametrize("lam", [Fraction(1, 10), HALF, Fraction(9, 10)])
def test_marginals_agree_with_enumeration(lam):
    L, ell = 6, 1
    marginals = pi_marginals(L, lam, ell=ell, exact=True)
    for x, p in marginals.zero_prob.items():
        assert p == enumeration_probability(L, lam, lambda h, x=x: h[:, x + L] == 0, exact=True)
    for n, p in enumerate(marginals.crossing_law):
        assert p == enumeration_probability(L, lam, lambda h, n=n: zero_crossing_arrays(h)[3] == n, exact=True)
    for k, p in enumerate(marginals.zeros_tail):
        assert p == enumeration_probability(L, lam, lambda h, k=k: zero_crossing_arrays(h)[2] > k, exact=True)
    plus = enumeration_probability(L, lam, lambda h: classify_heights(h, ell, None)[0], exact=True)
    assert marginals.omega_plus == plus


def test_capped_mass_agrees_with_enumeration():
    L, c_o = 8, 0.5
    marginals = pi_marginals(L, HALF, ell=1, c_o=c_o, exact=True)
    mass = enumeration_probability(L, HALF, lambda h: classify_heights(h, 1, c_o)[2], exact=True)
    assert marginals.omega_o == mass
    assert 0 < mass < 1


def test_sign_field_weight_of_all_plus():
    tables = segment_tables(3, HALF, exact=True)
    total = sum(
        sigma_weight(signs, tables)
        for signs in [(a, b, c) for a in (1, -1) for b in (1, -1) for c in (1, -1)]
    )
    assert sigma_weight((1, 1, 1), tables) / total == Fraction(13, 40)
    assert sigma_flip_probability((1, 1, 1), 0, tables) == Fraction(1, 13)
    with pytest.raises(InvalidInputError):
        sigma_flip_probability((1, 1, 1), 1, tables)


def test_excursion_tail_exponent():
    kernel = excursion_kernel(4000, 0.5)
    fit = tail_fit(kernel, 400, 4000)
    assert fit.exponent == pytest.approx(-1.5, abs=0.03)
    assert fit.r_squared > 0.999


def test_wall_normalizer_matches_partial_sums():
    kernel = excursion_kernel(20000, 0.5)
    partial = float(np.sum(kernel.weights))
    assert partial < wall_normalizer(0.5)
    assert partial == pytest.approx(wall_normalizer(0.5), rel=0.015)
    with pytest.raises(InvalidInputError):
        wall_normalizer(2.0)


def test_crossing_marginals_are_normalized():
    law = nu_n_marginals(1, 4, HALF, exact=True)
    assert sum(law.marginals[0]) == 1
    assert sum(law.probability(CrossingConfig(4, (int(x),))) for x in law.sites) == 1
    assert sum(law.first_segment.values()) == 1

    two = nu_n_marginals(2, 8, 0.5)
    assert np.allclose(two.marginals.sum(axis=1), 1.0)
    with pytest.raises(InvalidInputError):
        nu_n_marginals(4, 4, 0.5)


def test_first_segment_tail_direct_and_convolution_agree():
    tail = first_segment_tail(2, 100, 0.5)
    assert tail.value == pytest.approx(tail.direct_value, rel=1e-9)
    assert 0 < tail.value < 1
    assert first_segment_tail(0, 20, 0.5).value == pytest.approx(1.0)


def test_crossing_sampler_draws_valid_gaps():
    kernel = excursion_kernel(40, 0.5)
    sampler = CrossingSampler(kernel, 3, 40)
    rng = stream(5)
    for _ in range(50):
        gaps = sampler.sample(rng)
        assert len(gaps) == 4
        assert sum(gaps) == 40
        assert all(g >= 2 and g % 2 == 0 for g in gaps)
    assert sampler.gaps_from_uniforms([0.3, 0.6, 0.9]) == sampler.gaps_from_uniforms([0.3, 0.6, 0.9])
    with pytest.raises(InvalidInputError):
        CrossingSampler(kernel, 3, 6)


def test_conditioned_equilibrium_samples():
    rng = stream(1)
    paths = sample_equilibrium(6, 0.5, rng, size=20, condition=lambda h: classify_heights(h, 1, None)[0])
    assert all(np.all(p.heights[2:-2] > 0) for p in paths)
    with pytest.raises(InvalidInputError):
        sample_equilibrium(4, 0.5, rng, condition=lambda h: np.zeros(h.shape[0], dtype=bool))
