import math

import numpy as np
import pytest

from pinning_dynamics.errors import CapacityError, InvalidInputError
from pinning_dynamics.polymer_core import (
    BoundaryPair,
    CrossingConfig,
    PathConfig,
    SignField,
    classify,
    classify_heights,
    constrained_space,
    enumerate_paths,
    leq,
    maximal_path,
    minimal_path,
    omega_plus_floor,
    path_space,
    path_stats,
    sign_class_keys,
    zero_crossing_arrays,
)


def test_path_from_string_heights_and_key():
    path = PathConfig.from_string("++--")
    assert path.L == 2
    assert path.heights.tolist() == [0, 1, 2, 1, 0]
    assert path.height(0) == 2
    assert path.key == 0b1100
    assert PathConfig.from_key(path.key, 2) == path
    assert str(-path) == "--++"


@pytest.mark.parametrize("text", ["+++-", "+-+", "+x-+", ""])
def test_invalid_paths_are_rejected(text):
    with pytest.raises(InvalidInputError):
        PathConfig.from_string(text)


def test_extremal_paths():
    L = 5
    top, bottom = maximal_path(L), minimal_path(L)
    x = np.arange(-L, L + 1)
    assert top.heights.tolist() == (L - np.abs(x)).tolist()
    assert bottom.heights.tolist() == (np.abs(x) - L).tolist()
    assert leq(bottom, top)
    assert not leq(top, bottom)


def test_path_space_is_sorted_and_complete():
    space = path_space(4)
    assert len(space) == math.comb(8, 4)
    assert np.all(np.diff(space.keys) > 0)
    assert np.all(space.heights[:, 0] == 0) and np.all(space.heights[:, -1] == 0)
    paths = enumerate_paths(4)
    assert [p.key for p in paths] == space.keys.tolist()
    assert space.index(maximal_path(4)) == len(space) - 1
    assert space.index(minimal_path(4)) == 0


def test_mirror_permutation_is_an_involution():
    space = path_space(5)
    mirror = space.mirror_permutation()
    assert np.array_equal(mirror[mirror], np.arange(len(space)))
    assert np.array_equal(space.heights[mirror], -space.heights)


def test_path_space_capacity():
    with pytest.raises(CapacityError) as excinfo:
        path_space(13)
    assert excinfo.value.bound_name == "L_max"
    assert excinfo.value.requested == 13


def test_zero_and_crossing_statistics():
    stats = path_stats(PathConfig.from_string("+--+"))
    assert stats.N == 1
    assert stats.chi == 1
    assert stats.crossings.positions == (0,)
    assert stats.signs.signs == (1, -1)

    touch = path_stats(PathConfig.from_string("+-+-"))
    assert touch.N == 1
    assert touch.chi == 0


def test_zero_crossing_arrays_over_the_whole_space():
    space = path_space(6)
    zeros, cross, n_zeros, chi, max_segment = zero_crossing_arrays(space.heights)
    assert np.all(cross <= zeros)
    assert np.all(chi <= n_zeros)
    assert np.all(max_segment + chi <= n_zeros)
    assert n_zeros[space.index(maximal_path(6))] == 0


def test_sign_field_and_crossings_agree():
    signs = SignField(5, (1, 1, -1, -1, 1))
    crossings = signs.crossings()
    assert crossings.positions == (-1, 3)
    assert crossings.gaps() == (4, 4, 2)
    assert SignField.from_crossings(crossings, first_sign=1) == signs
    assert SignField.from_key(signs.key, 5) == signs
    assert (-signs).signs == (-1, -1, 1, 1, -1)


@pytest.mark.parametrize("positions", [(1,), (-4,), (0, 0)])
def test_invalid_crossing_configurations(positions):
    with pytest.raises(InvalidInputError):
        CrossingConfig(4, positions)


def test_classification_of_the_top_path():
    result = classify(maximal_path(6), ell=1)
    assert result.plus and not result.minus and result.in_o
    result = classify(minimal_path(6), ell=1)
    assert result.minus and not result.plus


def test_omega_plus_is_the_up_set_of_its_floor():
    L, ell = 6, 1
    space = path_space(L)
    floor = omega_plus_floor(L, ell)
    plus, _, _ = classify_heights(space.heights, ell, None)
    above = np.all(space.heights >= floor.heights, axis=1)
    assert np.array_equal(plus, above)
    bounded = constrained_space(L, BoundaryPair(floor, maximal_path(L)))
    assert len(bounded) == int(plus.sum())


def test_boundary_pair_must_be_ordered():
    with pytest.raises(InvalidInputError):
        BoundaryPair(maximal_path(3), minimal_path(3))
    assert BoundaryPair.free(3).is_free


def test_zero_cap_shrinks_the_space():
    L = 8
    free = path_space(L)
    capped = constrained_space(L, c_o=0.5)
    assert 0 < len(capped) < len(free)


def test_sign_class_keys_of_the_top_path():
    space = path_space(4)
    keys = sign_class_keys(space)
    assert keys[space.index(maximal_path(4))] == 0b1111
    assert keys[space.index(minimal_path(4))] == 0
