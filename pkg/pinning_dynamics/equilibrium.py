# pinning_dynamics/equilibrium.py

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from pinning_dynamics.config import (
    DEFAULT_L_MAX,
    EXACT_L_MAX,
    TABLE_LENGTH_LIMIT,
    check_capacity,
    default_c_o,
    default_ell,
    zero_cap,
)
from pinning_dynamics.errors import InsufficientDataError, InvalidInputError
from pinning_dynamics.polymer_core import CrossingConfig, PathConfig, path_space

logger = logging.getLogger(__name__)

Number = Union[float, Fraction]

# Every table is indexed by the length j and stores w[j] = 2^{-j}·Z[j];
# odd lengths are identically zero.


def _as_lambda(lam: Number, exact: bool) -> Number:
    if lam <= 0:
        raise InvalidInputError(f"lambda must be positive, got {lam}")
    if exact:
        return lam if isinstance(lam, Fraction) else Fraction(str(lam))
    return float(lam)


def _zeros(shape, exact: bool) -> np.ndarray:
    if exact:
        out = np.empty(shape, dtype=object)
        out.fill(Fraction(0))
        return out
    return np.zeros(shape, dtype=np.float64)


def _check_length(max_len: int):
    if max_len < 0 or max_len % 2:
        raise InvalidInputError(f"table length must be even and non-negative, got {max_len}")
    check_capacity("TABLE_LENGTH_LIMIT", TABLE_LENGTH_LIMIT, max_len, "partition table length")


def excursion_weights(max_len: int, exact: bool = False) -> np.ndarray:
    """e[2r] = 2^{-2r}·Cat(r-1): strictly positive excursions of length 2r."""
    _check_length(max_len)
    e = _zeros(max_len + 1, exact)
    if max_len >= 2:
        e[2] = Fraction(1, 4) if exact else 0.25
    for r in range(1, max_len // 2):
        ratio = Fraction(2 * r - 1, 2 * (r + 1)) if exact else (2 * r - 1) / (2.0 * (r + 1))
        e[2 * r + 2] = e[2 * r] * ratio
    return e


def _first_return(first: np.ndarray, lam: Number, max_len: int, exact: bool) -> np.ndarray:
    """w[2m] = first[2m] + λ·Σ_{r<m} first[2r]·w[2m-2r]; w[0] = 1."""
    w = _zeros(max_len + 1, exact)
    w[0] = Fraction(1) if exact else 1.0
    for m in range(1, max_len // 2 + 1):
        j = 2 * m
        if m > 1:
            w[j] = first[j] + lam * np.dot(first[2:j:2], w[j - 2:0:-2])
        else:
            w[j] = first[j]
    return w


def wall_weights(max_len: int, lam: Number, exact: bool = False) -> np.ndarray:
    """Scaled wall partition functions, one λ per interior return to zero."""
    lam = _as_lambda(lam, exact)
    return _first_return(excursion_weights(max_len, exact), lam, max_len, exact)


def free_weights(max_len: int, lam: Number, exact: bool = False) -> np.ndarray:
    """Scaled free partition functions: wall excursions reflected to either half plane."""
    lam = _as_lambda(lam, exact)
    e = excursion_weights(max_len, exact)
    return _first_return(2 * e, lam, max_len, exact)


def _zero_resolved(first: np.ndarray, max_len: int, k_max: int, exact: bool) -> np.ndarray:
    table = _zeros((max_len + 1, k_max + 1), exact)
    table[0, 0] = Fraction(1) if exact else 1.0
    for m in range(1, max_len // 2 + 1):
        j = 2 * m
        table[j, 0] = first[j]
        if m > 1 and k_max > 0:
            table[j, 1:] = np.dot(first[2:j:2], table[j - 2:0:-2, :-1])
    return table


def zero_resolved_wall(max_len: int, k_max: int, exact: bool = False) -> np.ndarray:
    """A[j, k] = 2^{-j}·#(wall paths of length j with k interior zeros)."""
    _check_length(max_len)
    return _zero_resolved(excursion_weights(max_len, exact), max_len, k_max, exact)


def zero_resolved_free(max_len: int, k_max: int, exact: bool = False) -> np.ndarray:
    _check_length(max_len)
    return _zero_resolved(2 * excursion_weights(max_len, exact), max_len, k_max, exact)


def capped_weights(resolved: np.ndarray, lam: Number, cap: int) -> np.ndarray:
    """Σ_{k ≤ m} λ^k·A[j, k] for every m ≤ cap, as a (length, cap+1) table."""
    powers = np.array([lam ** k for k in range(resolved.shape[1])], dtype=resolved.dtype)
    weighted = resolved[:, : cap + 1] * powers[: cap + 1]
    return np.cumsum(weighted, axis=1)


@dataclass(frozen=True, eq=False)
class PartitionTable:
    lam: Number
    max_len: int
    w_free: np.ndarray
    w_wall: np.ndarray
    w_wall_capped: Optional[np.ndarray] = None
    zero_cap: Optional[int] = None
    exact: bool = False

    def _unscale(self, value: Number, j: int) -> Number:
        return value * (2 ** j) if self.exact else float(value) * 2.0 ** j

    def z_free(self, j: int) -> Number:
        return self._unscale(self.w_free[j], j)

    def z_wall(self, j: int) -> Number:
        return self._unscale(self.w_wall[j], j)

    def z_wall_capped(self, j: int, m: Optional[int] = None) -> Number:
        if self.w_wall_capped is None:
            raise InvalidInputError("table was built without a zero cap")
        m = self.zero_cap if m is None else m
        if m < 0 or m > self.zero_cap:
            raise InvalidInputError(f"cap {m} outside [0, {self.zero_cap}]")
        return self._unscale(self.w_wall_capped[j, m], j)

    def rows(self) -> List[Tuple]:
        """(j, w_free, w_wall, w_wall_capped) for every even j ≥ 2."""
        out = []
        for j in range(2, self.max_len + 1, 2):
            capped = self.w_wall_capped[j, self.zero_cap] if self.w_wall_capped is not None else None
            out.append((j, self.w_free[j], self.w_wall[j], capped))
        return out


def partition_functions(
    L: int,
    lam: Number,
    zero_cap: Optional[int] = None,
    exact: bool = False,
) -> PartitionTable:
    """Free, wall and capped wall partition functions for all even lengths ≤ 2L."""
    if L < 1:
        raise InvalidInputError(f"L must be >= 1, got {L}")
    if exact:
        check_capacity("EXACT_L_MAX", EXACT_L_MAX, L, "exact rational partition functions")
    max_len = 2 * L
    _check_length(max_len)
    lam_value = _as_lambda(lam, exact)
    w_wall = wall_weights(max_len, lam_value, exact)
    w_free = free_weights(max_len, lam_value, exact)
    w_capped = None
    if zero_cap is not None:
        if zero_cap < 0:
            raise InvalidInputError("zero cap must be non-negative")
        resolved = zero_resolved_wall(max_len, zero_cap, exact)
        w_capped = capped_weights(resolved, lam_value, zero_cap)
    return PartitionTable(
        lam=lam_value,
        max_len=max_len,
        w_free=w_free,
        w_wall=w_wall,
        w_wall_capped=w_capped,
        zero_cap=zero_cap,
        exact=exact,
    )


def reflection_defect(max_len: int, lam: Number, exact: bool = False) -> Number:
    """max_j |2·w_wall(λ)[j] - w_free(λ/2)[j]| / w_free(λ/2)[j]."""
    lam_value = _as_lambda(lam, exact)
    wall = wall_weights(max_len, lam_value, exact)
    free = free_weights(max_len, lam_value / 2, exact)
    worst = Fraction(0) if exact else 0.0
    for j in range(2, max_len + 1, 2):
        defect = abs(2 * wall[j] - free[j]) / free[j]
        worst = max(worst, defect)
    return worst


@dataclass(frozen=True, eq=False)
class ExcursionKernel:
    """Unnormalized segment weights w[j]; w[0] = 0 and the normalizer z_+ is never formed."""

    lam: Number
    weights: np.ndarray
    zero_cap: Optional[int] = None

    @property
    def max_len(self) -> int:
        return len(self.weights) - 1

    @property
    def exact(self) -> bool:
        return self.weights.dtype == object

    def weight(self, j: int) -> Number:
        if j < 0 or j > self.max_len:
            raise InvalidInputError(f"length {j} outside kernel range [0, {self.max_len}]")
        return self.weights[j]


def excursion_kernel(max_len: int, lam: Number, zero_cap: Optional[int] = None, exact: bool = False) -> ExcursionKernel:
    lam_value = _as_lambda(lam, exact)
    if zero_cap is None:
        weights = wall_weights(max_len, lam_value, exact)
    else:
        resolved = zero_resolved_wall(max_len, zero_cap, exact)
        weights = capped_weights(resolved, lam_value, zero_cap)[:, zero_cap].copy()
    weights[0] = Fraction(0) if exact else 0.0
    return ExcursionKernel(lam=lam_value, weights=weights, zero_cap=zero_cap)


def convolve_even(a: np.ndarray, b: np.ndarray, max_len: int) -> np.ndarray:
    """Convolution of two sequences supported on even lengths, truncated at max_len."""
    exact = a.dtype == object or b.dtype == object
    ae = a[0 : max_len + 1 : 2]
    be = b[0 : max_len + 1 : 2]
    half = max_len // 2
    out = _zeros(max_len + 1, exact)
    if exact:
        for r in range(half + 1):
            out[2 * r] = np.dot(ae[: r + 1], be[r::-1])
    else:
        out[0::2] = np.convolve(ae, be)[: half + 1]
    return out


def kernel_powers(kernel: ExcursionKernel, k_max: int, max_len: Optional[int] = None) -> List[np.ndarray]:
    """[w^{*0}, w^{*1}, ..., w^{*k_max}] truncated at max_len."""
    max_len = kernel.max_len if max_len is None else max_len
    if max_len > kernel.max_len:
        raise InvalidInputError(f"kernel covers lengths up to {kernel.max_len}, requested {max_len}")
    delta = _zeros(max_len + 1, kernel.exact)
    delta[0] = Fraction(1) if kernel.exact else 1.0
    powers = [delta]
    base = kernel.weights[: max_len + 1]
    for _ in range(k_max):
        powers.append(convolve_even(powers[-1], base, max_len))
    return powers


@dataclass(frozen=True)
class EquilibriumMarginals:
    L: int
    lam: Number
    ell: int
    zero_prob: Dict[int, Number]
    crossing_law: List[Number]
    zeros_tail: List[Number]
    omega_plus: Number
    omega_minus: Number
    omega_o: Optional[Number]
    zero_cap: Optional[int]


def _omega_plus_weight(L: int, ell: int, free: np.ndarray, e: np.ndarray, lam: Number, exact: bool) -> Number:
    """
    Weight of Ω^+ by the last zero a ≤ -L+ℓ and the first zero b ≥ L-ℓ,
    joined by a strictly positive excursion.
    """
    one = Fraction(1) if exact else 1.0
    if not any(-L + ell < x < L - ell for x in range(-L, L + 1)):
        return free[2 * L]
    total = Fraction(0) if exact else 0.0
    lefts = [a for a in range(-L, -L + ell + 1) if (a + L) % 2 == 0]
    rights = [b for b in range(L - ell, L + 1) if (b + L) % 2 == 0]
    for a in lefts:
        left = free[a + L] * (lam if a > -L else one)
        for b in rights:
            if b - a < 2:
                continue
            right = free[L - b] * (lam if b < L else one)
            total += left * e[b - a] * right
    return total


def pi_marginals(
    L: int,
    lam: Number,
    ell: Optional[int] = None,
    c_o: Optional[float] = None,
    k_max: Optional[int] = None,
    exact: bool = False,
) -> EquilibriumMarginals:
    """Closed-form equilibrium probabilities from the excursion tables."""
    if L < 2:
        raise InvalidInputError("closed-form marginals need L >= 2")
    ell = default_ell(L) if ell is None else ell
    if exact:
        check_capacity("EXACT_L_MAX", EXACT_L_MAX, L, "exact rational marginals")
    lam_value = _as_lambda(lam, exact)
    max_len = 2 * L
    table = partition_functions(L, lam_value, exact=exact)
    free = table.w_free
    total = free[max_len]

    zero_prob = {}
    for x in range(-L + 2, L - 1, 2):
        zero_prob[x] = lam_value * free[L + x] * free[L - x] / total

    kernel = excursion_kernel(max_len, lam_value, exact=exact)
    powers = kernel_powers(kernel, L)
    crossing_law = [2 * lam_value ** n * powers[n + 1][max_len] / total for n in range(L)]

    k_max = min(L - 1, 30) if k_max is None else min(k_max, L - 1)
    resolved = zero_resolved_free(max_len, k_max, exact)
    tail = []
    cumulative = Fraction(0) if exact else 0.0
    for k in range(k_max + 1):
        cumulative += lam_value ** k * resolved[max_len, k] / total
        tail.append(1 - cumulative)

    e = excursion_weights(max_len, exact)
    omega_plus = _omega_plus_weight(L, ell, free, e, lam_value, exact) / total

    cap = zero_cap(L, c_o)
    omega_o = None
    if c_o is not None:
        if cap is None:
            omega_o = Fraction(1) if exact else 1.0
        else:
            capped = excursion_kernel(max_len, lam_value, zero_cap=cap, exact=exact)
            capped_powers = kernel_powers(capped, min(cap, L - 1))
            omega_o = sum(
                2 * lam_value ** n * capped_powers[n + 1][max_len] for n in range(min(cap, L - 1) + 1)
            ) / total
    logger.debug(f"Closed-form marginals for L={L}, lambda={lam}")
    return EquilibriumMarginals(
        L=L,
        lam=lam_value,
        ell=ell,
        zero_prob=zero_prob,
        crossing_law=crossing_law,
        zeros_tail=tail,
        omega_plus=omega_plus,
        omega_minus=omega_plus,
        omega_o=omega_o,
        zero_cap=cap,
    )


def path_weights(L: int, lam: Number, exact: bool = False, L_max: int = DEFAULT_L_MAX) -> np.ndarray:
    """λ^N for every path of the canonical enumeration."""
    space = path_space(L, L_max)
    n_zeros, _, _ = space.statistics
    lam_value = _as_lambda(lam, exact)
    if exact:
        powers = np.array([lam_value ** k for k in range(L + 1)], dtype=object)
        return powers[n_zeros]
    return np.power(lam_value, n_zeros.astype(np.float64))


def enumeration_probability(
    L: int,
    lam: Number,
    predicate: Callable[[np.ndarray], np.ndarray],
    exact: bool = False,
    L_max: int = DEFAULT_L_MAX,
) -> Number:
    """π(predicate) by summing λ^N over the enumeration; the predicate maps a height matrix to a mask."""
    space = path_space(L, L_max)
    n_zeros, _, _ = space.statistics
    mask = np.asarray(predicate(space.heights), dtype=bool)
    lam_value = _as_lambda(lam, exact)
    counts_all = np.bincount(n_zeros, minlength=L + 1)
    counts_hit = np.bincount(n_zeros[mask], minlength=L + 1)
    if exact:
        num = sum(int(c) * lam_value ** k for k, c in enumerate(counts_hit))
        den = sum(int(c) * lam_value ** k for k, c in enumerate(counts_all))
        return num / den
    powers = lam_value ** np.arange(L + 1, dtype=np.float64)
    return float(counts_hit @ powers / (counts_all @ powers))


@dataclass(frozen=True)
class TailFit:
    exponent: float
    amplitude: float
    r_squared: float
    n_points: int


def tail_fit(kernel: ExcursionKernel, j_min: int, j_max: int) -> TailFit:
    """Least-squares slope of log w[j] against log j over even j in the window."""
    if j_max > kernel.max_len:
        raise InvalidInputError(f"j_max={j_max} exceeds kernel length {kernel.max_len}")
    js = np.arange(j_min + (j_min % 2), j_max + 1, 2)
    js = js[js >= 2]
    if len(js) < 10:
        raise InsufficientDataError(f"fit window [{j_min}, {j_max}] has {len(js)} points, need at least 10")
    values = np.array([float(kernel.weights[j]) for j in js])
    fit = stats.linregress(np.log(js), np.log(values))
    return TailFit(
        exponent=float(fit.slope),
        amplitude=float(math.exp(fit.intercept)),
        r_squared=float(fit.rvalue ** 2),
        n_points=len(js),
    )


@dataclass(frozen=True, eq=False)
class CrossingMarginals:
    n: int
    L: int
    normalizer: Number
    sites: np.ndarray
    marginals: np.ndarray
    first_segment: Dict[int, Number]
    kernel: ExcursionKernel = field(repr=False)

    def probability(self, config: CrossingConfig) -> Number:
        if config.n != self.n or config.L != self.L:
            raise InvalidInputError("configuration does not match (n, L)")
        weight = Fraction(1) if self.kernel.exact else 1.0
        for g in config.gaps():
            weight = weight * self.kernel.weights[g]
        return weight / self.normalizer


def nu_n_marginals(
    n: int,
    L: int,
    lam: Number,
    capped: bool = False,
    c_o: Optional[float] = None,
    exact: bool = False,
) -> CrossingMarginals:
    """Law ν_n (or ν_{n,o}) of n crossing positions and its one-point marginals."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    if n > L - 1:
        raise InvalidInputError(f"no configuration of {n} crossings fits in E_{L} (at most {L - 1})")
    cap = zero_cap(L, c_o if c_o is not None else default_c_o(float(lam))) if capped else None
    max_len = 2 * L
    kernel = excursion_kernel(max_len, lam, zero_cap=cap, exact=exact)
    powers = kernel_powers(kernel, n + 1)
    normalizer = powers[n + 1][max_len]
    sites = np.arange(-L + 2, L - 1, 2)
    marginals = _zeros((n, len(sites)), exact)
    for i in range(1, n + 1):
        for s, x in enumerate(sites):
            marginals[i - 1, s] = powers[i][x + L] * powers[n + 1 - i][L - x] / normalizer
    first_segment = {
        j: kernel.weights[j] * powers[n][max_len - j] / normalizer for j in range(2, max_len - 2 * n + 1, 2)
    }
    return CrossingMarginals(
        n=n,
        L=L,
        normalizer=normalizer,
        sites=sites,
        marginals=marginals,
        first_segment=first_segment,
        kernel=kernel,
    )


@dataclass(frozen=True)
class SegmentTail:
    n: int
    L: int
    threshold: int
    value: float
    direct_value: float
    scaled: float
    doney_ratio: float


def wall_normalizer(lam: float) -> float:
    """z_+ = Σ_j 2^{-j}·Z_wall[j] = 1/(2-λ), the wall recursion's generating function at 1."""
    if not 0 < lam < 2:
        raise InvalidInputError("the wall normalizer is finite only for 0 < lambda < 2")
    return 1.0 / (2.0 - lam)


def _composition_sum(total: int, parts: int, weights: np.ndarray) -> float:
    """Σ over (g_1..g_parts), even and ≥ 2, summing to total, of Π w[g_i]; summed first part outermost."""
    if parts == 0:
        return 1.0 if total == 0 else 0.0
    acc = 0.0
    for g in range(2, total - 2 * (parts - 1) + 1, 2):
        acc += float(weights[g]) * _composition_sum(total - g, parts - 1, weights)
    return acc


def first_segment_tail(n: int, L: int, lam: float) -> SegmentTail:
    """ν_n(ζ_1 ≥ 2L - L^{1/3}) with an independent direct summation and the convolution ratio."""
    if n < 0:
        raise InvalidInputError("n must be >= 0")
    if n > L - 1:
        raise InvalidInputError(f"no configuration of {n} crossings fits in E_{L}")
    max_len = 2 * L
    threshold = int(math.ceil(max_len - L ** (1.0 / 3.0)))
    threshold += threshold % 2
    kernel = excursion_kernel(max_len, lam)
    powers = kernel_powers(kernel, n + 1)
    normalizer = powers[n + 1][max_len]
    w = kernel.weights
    tail = sum(w[a] * powers[n][max_len - a] for a in range(threshold, max_len + 1, 2))
    direct = 0.0
    for a in range(max_len, threshold - 1, -2):
        direct += float(w[a]) * _composition_sum(max_len - a, n, w)
    value = float(tail / normalizer)
    ratio = float(normalizer / ((n + 1) * w[max_len] * wall_normalizer(lam) ** n))
    return SegmentTail(
        n=n,
        L=L,
        threshold=threshold,
        value=value,
        direct_value=direct / float(normalizer),
        scaled=(n + 1) * value,
        doney_ratio=ratio,
    )


class CrossingSampler:
    """
    Exact draws of n crossing gaps over a segment of given length from the
    product kernel conditioned on the total, one gap at a time.
    """

    def __init__(self, kernel: ExcursionKernel, n: int, length: int):
        if length % 2 or length < 2 * (n + 1):
            raise InvalidInputError(f"cannot place {n} crossings in a segment of length {length}")
        self.kernel = kernel
        self.n = n
        self.length = length
        self._powers = [np.asarray(p, dtype=np.float64) for p in kernel_powers(kernel, n + 1, length)]
        self._w = np.asarray(kernel.weights[: length + 1], dtype=np.float64)

    def _gap_law(self, remaining: int, parts_left: int):
        gaps = np.arange(2, remaining - 2 * (parts_left - 1) + 1, 2)
        probs = self._w[gaps] * self._powers[parts_left - 1][remaining - gaps]
        return gaps, probs / probs.sum()

    def gaps_from_uniforms(self, uniforms: Sequence[float]) -> Tuple[int, ...]:
        """Inverse-CDF draw; the same uniforms give the same gaps for the same segment."""
        gaps = []
        remaining = self.length
        for i in range(self.n):
            values, probs = self._gap_law(remaining, self.n + 1 - i)
            k = int(np.searchsorted(np.cumsum(probs), uniforms[i], side="right"))
            g = int(values[min(k, len(values) - 1)])
            gaps.append(g)
            remaining -= g
        gaps.append(remaining)
        return tuple(gaps)

    def sample(self, rng: np.random.Generator) -> Tuple[int, ...]:
        return self.gaps_from_uniforms(rng.random(self.n))


def sample_equilibrium(
    L: int,
    lam: float,
    rng: np.random.Generator,
    size: int = 1,
    condition: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    L_max: int = DEFAULT_L_MAX,
) -> List[PathConfig]:
    """Exact draws from π, or from π conditioned on a height-matrix predicate."""
    space = path_space(L, L_max)
    weights = path_weights(L, lam, L_max=L_max)
    if condition is not None:
        weights = weights * np.asarray(condition(space.heights), dtype=bool)
    if weights.sum() <= 0:
        raise InvalidInputError("the conditioning event has zero probability")
    picks = rng.choice(len(space), size=size, p=weights / weights.sum())
    return [space.path(int(i)) for i in picks]


def sample_crossings(n: int, length: int, kernel: ExcursionKernel, rng: np.random.Generator) -> Tuple[int, ...]:
    """Gap vector of one exact draw of n crossings over a segment of the given length."""
    return CrossingSampler(kernel, n, length).sample(rng)


@dataclass(frozen=True, eq=False)
class SegmentTables:
    """
    Segment partition functions for sign-field computations: wall weights,
    and with a zero cap the zero-resolved and cumulative capped tables.
    """

    L: int
    lam: Number
    wall: np.ndarray
    cap: Optional[int] = None
    resolved: Optional[np.ndarray] = None
    capped: Optional[np.ndarray] = None

    @property
    def exact(self) -> bool:
        return self.wall.dtype == object

    def segment_weight(self, g: int) -> Number:
        if self.cap is None:
            return self.wall[g]
        return self.capped[g, self.cap]

    def zero_pmf(self, g: int) -> np.ndarray:
        """Law of the number of zeros strictly inside a capped segment of length g."""
        powers = np.array([self.lam ** k for k in range(self.cap + 1)], dtype=self.resolved.dtype)
        return self.resolved[g, : self.cap + 1] * powers / self.capped[g, self.cap]

    def zero_cdf(self, g: int, m: int) -> Number:
        if m < 0:
            return Fraction(0) if self.exact else 0.0
        m = min(m, self.cap)
        return self.capped[g, m] / self.capped[g, self.cap]


def segment_tables(L: int, lam: Number, cap: Optional[int] = None, exact: bool = False) -> SegmentTables:
    lam_value = _as_lambda(lam, exact)
    max_len = 2 * L
    wall = wall_weights(max_len, lam_value, exact)
    if cap is None:
        return SegmentTables(L=L, lam=lam_value, wall=wall)
    resolved = zero_resolved_wall(max_len, cap, exact)
    return SegmentTables(
        L=L,
        lam=lam_value,
        wall=wall,
        cap=cap,
        resolved=resolved,
        capped=capped_weights(resolved, lam_value, cap),
    )


def sign_crossings(signs: Sequence[int]) -> List[int]:
    """Crossing positions of a sign field on O_L."""
    L = len(signs)
    return [-L + 2 + 2 * i for i in range(L - 1) if signs[i] != signs[i + 1]]


def sigma_weight(signs: Sequence[int], tables: SegmentTables) -> Number:
    """Unnormalized ν(σ) = λ^χ·Π segment weights; zero when χ exceeds the cap."""
    L = len(signs)
    points = [-L] + sign_crossings(signs) + [L]
    chi = len(points) - 2
    if tables.cap is not None and chi > tables.cap:
        return Fraction(0) if tables.exact else 0.0
    weight = tables.lam ** chi
    for a, b in zip(points, points[1:]):
        weight = weight * tables.segment_weight(b - a)
    return weight


def sigma_flip_probability(signs: Sequence[int], x: int, tables: SegmentTables) -> Number:
    """
    P(η_{x-1} = η_{x+1} = 0 | Ω_σ), the chance that the sign at x can flip.
    With a zero cap the path and its flip must both stay in Ω^o, and the
    conditioning is on Ω_σ ∩ Ω^o.
    """
    L = len(signs)
    if not (-L + 1 <= x <= L - 1) or (x + L) % 2 != 1:
        raise InvalidInputError(f"site {x} is not in O_{L}")
    points = [-L] + sign_crossings(signs) + [L]
    n = len(points) - 2
    s = max(i for i in range(n + 1) if points[i] < x)
    left, right = points[s], points[s + 1]
    len1, len2 = x - 1 - left, right - (x + 1)
    new_left = len1 > 0
    new_right = len2 > 0
    merge_left = not new_left and s >= 1
    merge_right = not new_right and s + 1 <= n
    lam = tables.lam
    zero = Fraction(0) if tables.exact else 0.0
    created = int(new_left) + int(new_right)
    if tables.cap is None:
        return lam ** created * tables.wall[len1] * tables.wall[2] * tables.wall[len2] / tables.wall[right - left]

    cap = tables.cap
    if n + created - int(merge_left) - int(merge_right) > cap or n > cap:
        return zero
    budget = cap - created
    if budget < 0:
        return zero
    powers = np.array([lam ** k for k in range(cap + 1)], dtype=tables.resolved.dtype)
    a1 = tables.resolved[len1, : cap + 1] * powers
    a2 = tables.resolved[len2, : cap + 1] * powers
    inner = zero
    for k1 in range(budget + 1):
        inner = inner + a1[k1] * np.sum(a2[: budget - k1 + 1])
    prob = lam ** created * tables.wall[2] * inner / tables.capped[right - left, cap]

    if merge_left and merge_right:
        pmf = tables.zero_pmf(points[s] - points[s - 1])
        g_next = points[s + 2] - points[s + 1]
        prob = prob * sum(pmf[k] * tables.zero_cdf(g_next, cap - 2 - k) for k in range(cap + 1))
    elif merge_left:
        prob = prob * tables.zero_cdf(points[s] - points[s - 1], cap - 1)
    elif merge_right:
        prob = prob * tables.zero_cdf(points[s + 2] - points[s + 1], cap - 1)
    return prob
