# pinning_dynamics/polymer_core.py

import functools
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from pinning_dynamics.config import DEFAULT_L_MAX, check_capacity, default_ell, zero_cap
from pinning_dynamics.errors import InvalidInputError

logger = logging.getLogger(__name__)

# Internal arrays use positions p = x + L in {0, ..., 2L}; public values use x in {-L, ..., L}.


@dataclass(frozen=True)
class PathConfig:
    """A lattice bridge of length 2L stored as its +1/-1 increments."""

    steps: Tuple[int, ...]

    def __post_init__(self):
        steps = tuple(int(s) for s in self.steps)
        object.__setattr__(self, "steps", steps)
        if len(steps) < 2 or len(steps) % 2:
            raise InvalidInputError(f"a bridge needs an even number >= 2 of steps, got {len(steps)}")
        if any(s not in (1, -1) for s in steps):
            raise InvalidInputError("steps must be +1 or -1")
        if sum(steps) != 0:
            raise InvalidInputError("steps of a bridge must sum to zero")

    @property
    def L(self) -> int:
        return len(self.steps) // 2

    @functools.cached_property
    def heights(self) -> np.ndarray:
        h = np.zeros(len(self.steps) + 1, dtype=np.int64)
        np.cumsum(self.steps, out=h[1:])
        h.setflags(write=False)
        return h

    def height(self, x: int) -> int:
        if abs(x) > self.L:
            raise InvalidInputError(f"site {x} outside [-{self.L}, {self.L}]")
        return int(self.heights[x + self.L])

    @functools.cached_property
    def key(self) -> int:
        """Integer key: bit 1 for an up step, first step most significant."""
        n = len(self.steps)
        return sum(1 << (n - 1 - i) for i, s in enumerate(self.steps) if s == 1)

    def to_string(self) -> str:
        return "".join("+" if s == 1 else "-" for s in self.steps)

    def __str__(self) -> str:
        return self.to_string()

    def __neg__(self) -> "PathConfig":
        return PathConfig(tuple(-s for s in self.steps))

    @classmethod
    def from_string(cls, text: str) -> "PathConfig":
        mapping = {"+": 1, "-": -1}
        try:
            return cls(tuple(mapping[c] for c in text.strip()))
        except KeyError as e:
            raise InvalidInputError(f"unexpected character {e.args[0]!r} in path string") from e

    @classmethod
    def from_heights(cls, heights: Sequence[int]) -> "PathConfig":
        h = np.asarray(heights, dtype=np.int64)
        if h[0] != 0 or h[-1] != 0:
            raise InvalidInputError("a bridge starts and ends at height 0")
        return cls(tuple(np.diff(h).tolist()))

    @classmethod
    def from_key(cls, key: int, L: int) -> "PathConfig":
        n = 2 * L
        return cls(tuple(1 if (key >> (n - 1 - i)) & 1 else -1 for i in range(n)))


def minimal_path(L: int) -> PathConfig:
    """The path ∨ with ∨_x = -(L - |x|)."""
    return PathConfig((-1,) * L + (1,) * L)


def maximal_path(L: int) -> PathConfig:
    """The path ∧ with ∧_x = L - |x|."""
    return PathConfig((1,) * L + (-1,) * L)


@dataclass(frozen=True)
class CrossingConfig:
    L: int
    positions: Tuple[int, ...]

    def __post_init__(self):
        positions = tuple(int(x) for x in self.positions)
        object.__setattr__(self, "positions", positions)
        for x in positions:
            if not (-self.L + 2 <= x <= self.L - 2) or (x + self.L) % 2:
                raise InvalidInputError(f"crossing {x} is not an interior site of E_{self.L}")
        gaps = self.gaps()
        if any(g < 2 or g % 2 for g in gaps):
            raise InvalidInputError(f"crossing gaps must be even and >= 2, got {gaps}")

    @property
    def n(self) -> int:
        return len(self.positions)

    def with_sentinels(self) -> Tuple[int, ...]:
        return (-self.L,) + self.positions + (self.L,)

    def gaps(self) -> Tuple[int, ...]:
        points = self.with_sentinels()
        return tuple(b - a for a, b in zip(points, points[1:]))


@dataclass(frozen=True)
class SignField:
    """Signs of a path on O_L = {-L+1, -L+3, ..., L-1}."""

    L: int
    signs: Tuple[int, ...]

    def __post_init__(self):
        signs = tuple(int(s) for s in self.signs)
        object.__setattr__(self, "signs", signs)
        if len(signs) != self.L:
            raise InvalidInputError(f"a sign field on O_{self.L} has {self.L} entries, got {len(signs)}")
        if any(s not in (1, -1) for s in signs):
            raise InvalidInputError("signs must be +1 or -1")

    def sites(self) -> List[int]:
        return list(range(-self.L + 1, self.L, 2))

    def crossings(self) -> CrossingConfig:
        positions = [
            -self.L + 2 + 2 * i
            for i in range(self.L - 1)
            if self.signs[i] != self.signs[i + 1]
        ]
        return CrossingConfig(self.L, tuple(positions))

    @property
    def key(self) -> int:
        """Bit 1 for a plus sign, site -L+1 most significant."""
        return sum(1 << (self.L - 1 - i) for i, s in enumerate(self.signs) if s == 1)

    @classmethod
    def from_key(cls, key: int, L: int) -> "SignField":
        return cls(L, tuple(1 if (key >> (L - 1 - i)) & 1 else -1 for i in range(L)))

    @classmethod
    def from_crossings(cls, crossings: CrossingConfig, first_sign: int = 1) -> "SignField":
        signs = []
        sign = first_sign
        cuts = set(crossings.positions)
        for x in range(-crossings.L + 1, crossings.L, 2):
            if x - 1 in cuts:
                sign = -sign
            signs.append(sign)
        return cls(crossings.L, tuple(signs))

    def __neg__(self) -> "SignField":
        return SignField(self.L, tuple(-s for s in self.signs))


@dataclass(frozen=True)
class BoundaryPair:
    """Floor ζ and ceiling ξ with ζ ≤ ξ; the free pair is (∨, ∧)."""

    floor: PathConfig
    ceiling: PathConfig

    def __post_init__(self):
        if self.floor.L != self.ceiling.L:
            raise InvalidInputError("floor and ceiling have different lengths")
        if not leq(self.floor, self.ceiling):
            raise InvalidInputError("floor must lie below ceiling")

    @property
    def L(self) -> int:
        return self.floor.L

    @classmethod
    def free(cls, L: int) -> "BoundaryPair":
        return cls(minimal_path(L), maximal_path(L))

    @property
    def is_free(self) -> bool:
        return self.floor == minimal_path(self.L) and self.ceiling == maximal_path(self.L)

    def contains(self, path: PathConfig) -> bool:
        return leq(self.floor, path) and leq(path, self.ceiling)

    def contains_heights(self, heights: np.ndarray) -> np.ndarray:
        return np.all(heights >= self.floor.heights, axis=-1) & np.all(heights <= self.ceiling.heights, axis=-1)


@dataclass(frozen=True)
class PathStats:
    N: int
    chi: int
    crossings: CrossingConfig
    signs: SignField


@dataclass(frozen=True)
class Classification:
    plus: bool
    minus: bool
    in_o: bool


def leq(first: PathConfig, second: PathConfig) -> bool:
    if first.L != second.L:
        raise InvalidInputError(f"cannot compare paths with L={first.L} and L={second.L}")
    return bool(np.all(first.heights <= second.heights))


def zero_crossing_arrays(heights: np.ndarray):
    """
    Zero and crossing masks over interior columns p = 1..2L-1 of a height
    matrix, with N, χ and the largest zero count strictly inside a segment.
    """
    heights = np.atleast_2d(heights)
    two_L = heights.shape[1] - 1
    zeros = heights[:, 1:two_L] == 0
    cross = np.zeros_like(zeros)
    if two_L >= 4:
        cross[:, 1:two_L - 2] = zeros[:, 1:two_L - 2] & (heights[:, 1:two_L - 2] != heights[:, 3:two_L])
    n_zeros = zeros.sum(axis=1)
    chi = cross.sum(axis=1)
    segment = np.cumsum(cross, axis=1)
    plain = zeros & ~cross
    max_segment = np.zeros(heights.shape[0], dtype=np.int64)
    for s in range(int(chi.max(initial=0)) + 1):
        np.maximum(max_segment, (plain & (segment == s)).sum(axis=1), out=max_segment)
    return zeros, cross, n_zeros, chi, max_segment


def sign_matrix(heights: np.ndarray) -> np.ndarray:
    """Signs on O_L, one row per path."""
    return np.sign(np.atleast_2d(heights)[:, 1::2]).astype(np.int8)


def sign_keys(heights: np.ndarray) -> np.ndarray:
    signs = sign_matrix(heights)
    L = signs.shape[1]
    weights = np.left_shift(np.int64(1), np.arange(L - 1, -1, -1, dtype=np.int64))
    return (signs > 0).astype(np.int64) @ weights


def classify_heights(heights: np.ndarray, ell: int, c_o: Optional[float]):
    heights = np.atleast_2d(heights)
    two_L = heights.shape[1] - 1
    L = two_L // 2
    window = heights[:, ell + 1:two_L - ell]
    if window.shape[1] == 0:
        plus = np.ones(heights.shape[0], dtype=bool)
        minus = plus.copy()
    else:
        plus = np.all(window > 0, axis=1)
        minus = np.all(window < 0, axis=1)
    cap = zero_cap(L, c_o)
    if cap is None:
        in_o = np.ones(heights.shape[0], dtype=bool)
    else:
        _, _, _, chi, max_segment = zero_crossing_arrays(heights)
        in_o = (chi <= cap) & (max_segment <= cap)
    return plus, minus, in_o


def path_stats(path: PathConfig) -> PathStats:
    _, cross, n_zeros, chi, _ = zero_crossing_arrays(path.heights)
    L = path.L
    positions = tuple(int(c + 1 - L) for c in np.flatnonzero(cross[0]))
    signs = SignField(L, tuple(int(s) for s in sign_matrix(path.heights)[0]))
    crossings = CrossingConfig(L, positions)
    if crossings != signs.crossings():
        raise AssertionError(f"crossings of {path} disagree with its sign field")
    return PathStats(N=int(n_zeros[0]), chi=int(chi[0]), crossings=crossings, signs=signs)


def classify(path: PathConfig, ell: Optional[int] = None, c_o: Optional[float] = None) -> Classification:
    """Membership of a path in Ω^+, Ω^- and Ω^o; c_o=None means no cap."""
    if ell is None:
        ell = default_ell(path.L)
    if ell < 1:
        raise InvalidInputError("ell must be >= 1")
    if c_o is not None and c_o <= 0:
        raise InvalidInputError("c_o must be positive")
    plus, minus, in_o = classify_heights(path.heights, ell, c_o)
    return Classification(plus=bool(plus[0]), minus=bool(minus[0]), in_o=bool(in_o[0]))


def omega_plus_floor(L: int, ell: Optional[int] = None) -> PathConfig:
    """Minimal element ζ(Ω^+): the lowest bridge positive on the phase window."""
    if ell is None:
        ell = default_ell(L)
    x = np.arange(-L, L + 1)
    floor = -(L - np.abs(x))
    window = x[(x > -L + ell) & (x < L - ell)]
    for y in window:
        least = 1 if (y + L) % 2 else 2
        floor = np.maximum(floor, least - np.abs(x - y))
    return PathConfig.from_heights(floor)


def _bridge_keys(L: int) -> np.ndarray:
    """Sorted integer keys of all bridges, built one leading bit at a time."""
    total = 2 * L
    row = {0: np.zeros(1, dtype=np.int64)}
    for n in range(1, total + 1):
        lo = max(0, L - (total - n))
        hi = min(n, L)
        top = np.int64(1) << np.int64(n - 1)
        new_row = {}
        for k in range(lo, hi + 1):
            parts = []
            if k in row:
                parts.append(row[k])
            if k - 1 in row:
                parts.append(row[k - 1] + top)
            if parts:
                new_row[k] = np.concatenate(parts)
        row = new_row
    return row[L]


class PathSpace:
    """
    All bridges of half-length L (or a subset) in canonical order, as
    arrays. Ascending keys coincide with lexicographic order on steps
    with -1 < +1.
    """

    def __init__(self, L: int, keys: np.ndarray):
        self.L = L
        self.keys = np.asarray(keys, dtype=np.int64)
        n = 2 * L
        shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
        bits = (self.keys[:, None] >> shifts) & 1
        self.steps = (2 * bits - 1).astype(np.int8)
        self.heights = np.zeros((len(self.keys), n + 1), dtype=np.int16)
        np.cumsum(self.steps, axis=1, dtype=np.int16, out=self.heights[:, 1:])

    def __len__(self) -> int:
        return len(self.keys)

    def path(self, index: int) -> PathConfig:
        return PathConfig(tuple(int(s) for s in self.steps[index]))

    def lookup(self, keys: np.ndarray):
        keys = np.asarray(keys, dtype=np.int64)
        idx = np.searchsorted(self.keys, keys)
        clipped = np.minimum(idx, len(self.keys) - 1)
        found = (idx < len(self.keys)) & (self.keys[clipped] == keys)
        return clipped, found

    def index(self, path: PathConfig) -> int:
        idx, found = self.lookup(np.array([path.key]))
        if not found[0]:
            raise KeyError(f"path {path} is not in this state space")
        return int(idx[0])

    def subset(self, mask: np.ndarray) -> "PathSpace":
        return PathSpace(self.L, self.keys[np.asarray(mask, dtype=bool)])

    @functools.cached_property
    def statistics(self):
        _, _, n_zeros, chi, max_segment = zero_crossing_arrays(self.heights)
        return n_zeros, chi, max_segment

    def mirror_permutation(self) -> Optional[np.ndarray]:
        """Index of -η for every η, or None if the set is not mirror symmetric."""
        full = (np.int64(1) << np.int64(2 * self.L)) - 1
        idx, found = self.lookup(np.bitwise_xor(self.keys, full))
        if not np.all(found):
            return None
        return idx


@functools.lru_cache(maxsize=8)
def _cached_space(L: int) -> PathSpace:
    space = PathSpace(L, _bridge_keys(L))
    logger.info(f"Enumerated {len(space)} bridges for L={L}")
    return space


def path_space(L: int, L_max: int = DEFAULT_L_MAX) -> PathSpace:
    if L < 1:
        raise InvalidInputError(f"L must be >= 1, got {L}")
    check_capacity("L_max", L_max, L, "path enumeration")
    return _cached_space(L)


def enumerate_paths(L: int, L_max: int = DEFAULT_L_MAX) -> List[PathConfig]:
    """All binom(2L, L) bridges in canonical lexicographic order."""
    space = path_space(L, L_max)
    return [space.path(i) for i in range(len(space))]


def constrained_space(
    L: int,
    bounds: Optional[BoundaryPair] = None,
    ell: Optional[int] = None,
    c_o: Optional[float] = None,
    L_max: int = DEFAULT_L_MAX,
) -> PathSpace:
    """Bridges inside the bounds and, when c_o is given, inside Ω^o."""
    space = path_space(L, L_max)
    mask = np.ones(len(space), dtype=bool)
    if bounds is not None and not bounds.is_free:
        if bounds.L != L:
            raise InvalidInputError("bounds have a different L")
        mask &= bounds.contains_heights(space.heights)
    if c_o is not None:
        _, _, in_o = classify_heights(space.heights, ell or default_ell(L), c_o)
        mask &= in_o
    if mask.all():
        return space
    return space.subset(mask)


def sign_class_keys(space: PathSpace) -> np.ndarray:
    """σ-class label of every path of the space."""
    return sign_keys(space.heights)

