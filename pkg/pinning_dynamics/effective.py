# pinning_dynamics/effective.py

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import stats
from scipy.linalg import eigh, eigvalsh_tridiagonal

from pinning_dynamics.config import PARTICLE_STATE_LIMIT, SIGMA_L_MAX, check_capacity
from pinning_dynamics.equilibrium import (
    CrossingSampler,
    ExcursionKernel,
    excursion_kernel,
    kernel_powers,
    segment_tables,
    sigma_flip_probability,
    sigma_weight,
)
from pinning_dynamics.errors import ConvergenceError, InsufficientDataError, InvalidInputError, OrderViolationError
from pinning_dynamics.rng import stream
from pinning_dynamics.spectral import ReversibleChain, sigma_heatbath_chain

logger = logging.getLogger(__name__)


def ramp(s: np.ndarray) -> np.ndarray:
    """-1 below 1/4, +1 above 3/4, linear in between."""
    return np.clip(4.0 * np.asarray(s, dtype=np.float64) - 2.0, -1.0, 1.0)


@dataclass(frozen=True)
class BirthDeathChain:
    """Nearest-neighbour chain on E_L's interior with steps of 2."""

    L: int
    kind: str
    sites: np.ndarray
    weights: np.ndarray
    up: np.ndarray
    down: np.ndarray

    def to_chain(self) -> ReversibleChain:
        n = len(self.sites)
        rows = np.concatenate([np.arange(n - 1), np.arange(1, n)])
        cols = np.concatenate([np.arange(1, n), np.arange(n - 1)])
        rates = sp.csr_matrix((np.concatenate([self.up, self.down]), (rows, cols)), shape=(n, n))
        return ReversibleChain(rates=rates, weights=self.weights, label="single-crossing", L=self.L)

    def gap(self) -> float:
        diag = np.zeros(len(self.sites))
        diag[:-1] += self.up
        diag[1:] += self.down
        off = -np.sqrt(self.up * self.down)
        vals = eigvalsh_tridiagonal(
            diag, off, select="i", select_range=(0, 1), lapack_driver="stebz", tol=np.finfo(float).tiny
        )
        return float(vals[1])

    def quotient(self, f: np.ndarray) -> float:
        """𝓔(f, f)/Var_ρ(f)."""
        rho = self.weights / self.weights.sum()
        energy = float(np.sum(rho[:-1] * self.up * np.diff(f) ** 2))
        mean = float(rho @ f)
        return energy / float(rho @ (f - mean) ** 2)


def single_crossing_chain(L: int, kind: str = "rho0", lam: float = 0.5) -> BirthDeathChain:
    """
    rho0: ρ₀(x) ∝ ((L+x)(L-x))^{-3/2}, c(x, x+2) = 1, c(x+2, x) = ρ₀(x)/ρ₀(x+2).
    rho: the one-crossing sector of the projected sign chain, rates θ_{x+1}.
    """
    sites = np.arange(-L + 2, L - 1, 2)
    if len(sites) < 2:
        raise InvalidInputError(f"E_{L} has {len(sites)} interior sites; a gap needs at least 2")
    if kind == "rho0":
        weights = ((L + sites.astype(np.float64)) * (L - sites)) ** -1.5
        weights /= weights.sum()
        up = np.ones(len(sites) - 1)
        down = weights[:-1] / weights[1:]
    elif kind == "rho":
        tables = segment_tables(L, lam)
        wall = np.asarray(tables.wall, dtype=np.float64)
        weights = wall[L + sites] * wall[L - sites]
        weights /= weights.sum()

        def single(x: int) -> Tuple[int, ...]:
            return tuple(1 if y < x else -1 for y in range(-L + 1, L, 2))

        up = np.array([0.5 * float(sigma_flip_probability(single(x), x + 1, tables)) for x in sites[:-1]])
        down = np.array([0.5 * float(sigma_flip_probability(single(x + 2), x + 1, tables)) for x in sites[:-1]])
    else:
        raise InvalidInputError(f"unknown kind {kind!r}; expected rho or rho0")
    return BirthDeathChain(L=L, kind=kind, sites=sites, weights=weights, up=up, down=down)


@dataclass(frozen=True)
class SingleCrossingGap:
    L: int
    kind: str
    gap: float
    ramp_bound: float

    @property
    def bound_ok(self) -> bool:
        return self.ramp_bound >= self.gap * (1.0 - 1e-9)


def single_crossing_gap(L: int, kind: str = "rho0", lam: float = 0.5) -> SingleCrossingGap:
    """Exact gap by Sturm bisection and the ramp test-function upper bound."""
    chain = single_crossing_chain(L, kind, lam)
    gap = chain.gap()
    bound = chain.quotient(ramp((chain.sites / L + 1.0) / 2.0))
    logger.debug(f"Single crossing L={L} ({kind}): gap={gap:.6e}, ramp bound={bound:.6e}")
    return SingleCrossingGap(L=L, kind=kind, gap=gap, ramp_bound=bound)


@dataclass(frozen=True)
class ParticleLaw:
    """Law of the middle particle's offset k from its left neighbour."""

    span: int
    offsets: np.ndarray
    probs: np.ndarray
    cdf: np.ndarray = field(repr=False)

    @property
    def alpha(self) -> float:
        return float(self.probs[0])

    def from_uniform(self, u: float) -> int:
        k = int(np.searchsorted(self.cdf, u, side="right"))
        return int(self.offsets[min(k, len(self.offsets) - 1)])

    def sample(self, rng: np.random.Generator) -> int:
        return self.from_uniform(rng.random())


def conditional_particle_law(left: int, right: int, kernel: ExcursionKernel) -> ParticleLaw:
    """P(k) ∝ w(k)·w(right - left - k) over k ∈ {2, 4, ..., right - left - 2}."""
    span = right - left
    if span % 2:
        raise InvalidInputError(f"neighbour distance must be even, got {span}")
    if span < 4:
        raise InvalidInputError(f"neighbour distance {span} leaves no free position")
    if span > kernel.max_len:
        raise InvalidInputError(f"neighbour distance {span} exceeds kernel length {kernel.max_len}")
    offsets = np.arange(2, span - 1, 2)
    w = np.asarray(kernel.weights, dtype=np.float64)
    probs = w[offsets] * w[span - offsets]
    probs /= probs.sum()
    return ParticleLaw(span=span, offsets=offsets, probs=probs, cdf=np.cumsum(probs))


@dataclass(frozen=True, eq=False)
class ParticleGapResult:
    n: int
    L: int
    gap: float
    n_states: int
    gaps: np.ndarray = field(repr=False)
    g: np.ndarray = field(repr=False)

    def index(self, gap_vector: Sequence[int]) -> int:
        matches = np.flatnonzero(np.all(self.gaps == np.asarray(gap_vector), axis=1))
        if len(matches) == 0:
            raise KeyError(f"gap vector {tuple(gap_vector)} is not a state")
        return int(matches[0])

    def eigenfunction(self) -> Dict[Tuple[int, ...], float]:
        return {tuple(int(v) for v in row): float(val) for row, val in zip(self.gaps, self.g)}


def compositions(n: int, L: int) -> np.ndarray:
    """Gap vectors (g_0, ..., g_n) of n particles, even parts ≥ 2 summing to 2L, in colex order."""
    if n < 0 or n > L - 1:
        raise InvalidInputError(f"no configuration of {n} particles on a segment of length {2 * L}")
    check_capacity("PARTICLE_STATE_LIMIT", PARTICLE_STATE_LIMIT, math.comb(L - 1, n), "composition enumeration")
    if n == 0:
        return np.array([[2 * L]], dtype=np.int64)
    cuts = np.array(list(itertools.combinations(range(1, L), n)), dtype=np.int64)
    edges = np.hstack([np.zeros((len(cuts), 1), dtype=np.int64), cuts, np.full((len(cuts), 1), L, dtype=np.int64)])
    gaps = 2 * np.diff(edges, axis=1)
    return gaps[np.lexsort(gaps.T)]


def particle_equilibration_gap(n: int, L: int, kernel: ExcursionKernel, dense_limit: int = 2000) -> ParticleGapResult:
    """
    Gap of the dynamics resampling each particle at rate 1 from its full
    conditional: -𝓛 = n - Σ_i Π_i with Π_i the conditional expectations.
    """
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    gaps = compositions(n, L)
    w = np.asarray(kernel.weights, dtype=np.float64)
    weights = np.prod(w[gaps], axis=1)
    pi = weights / weights.sum()
    root = np.sqrt(pi)
    groups = []
    for i in range(1, n + 1):
        others = np.delete(gaps, [i - 1, i], axis=1)
        signature = np.hstack([others, (gaps[:, i - 1] + gaps[:, i])[:, None]])
        _, inverse = np.unique(signature, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        groups.append((inverse, np.bincount(inverse, weights=pi)))

    def apply(phi: np.ndarray) -> np.ndarray:
        phi = np.asarray(phi).ravel()
        out = np.zeros_like(phi)
        for inverse, mass in groups:
            out += root * (np.bincount(inverse, weights=root * phi, minlength=len(mass)) / mass)[inverse]
        return out

    m = len(gaps)
    if m == 1:
        raise InvalidInputError(f"a single configuration of {n} particles on length {2 * L} has no gap")
    if m <= dense_limit:
        B = np.column_stack([apply(col) for col in np.eye(m)])
        vals, vecs = eigh(0.5 * (B + B.T))
        second, vec = float(vals[-2]), vecs[:, -2]
    else:
        op = spla.LinearOperator((m, m), matvec=apply, dtype=np.float64)
        vals, vecs = spla.eigsh(op, k=2, which="LA", tol=1e-12)
        order = np.argsort(vals)
        second, vec = float(vals[order[0]]), vecs[:, order[0]]
    gap = float(n - second)
    if gap <= 0:
        raise ConvergenceError(f"non-positive particle gap for n={n}, L={L}", residual=abs(gap))
    g = vec / root
    if g[-1] < 0:
        g = -g
    logger.info(f"Particle equilibration n={n}, L={L}: {m} states, gap={gap:.6e}")
    return ParticleGapResult(n=n, L=L, gap=gap, n_states=m, gaps=gaps, g=g)


class ParticleSystem:
    """n ordered particles on {-L, ..., L} with even gaps, each resampled at rate 1."""

    def __init__(
        self,
        kernel: ExcursionKernel,
        L: int,
        positions: Sequence[int],
        laws: Optional[Dict[int, ParticleLaw]] = None,
    ):
        self.kernel = kernel
        self.L = L
        # span -> law; may be shared by systems over the same kernel
        self.laws = {} if laws is None else laws
        self.positions = [int(x) for x in positions]
        self.check()

    @property
    def n(self) -> int:
        return len(self.positions)

    def check(self):
        points = [-self.L] + self.positions + [self.L]
        for a, b in zip(points, points[1:]):
            if b - a < 2 or (b - a) % 2:
                raise OrderViolationError(f"particle gaps must be even and >= 2, got {points}")

    def law(self, span: int) -> ParticleLaw:
        if span not in self.laws:
            self.laws[span] = conditional_particle_law(0, span, self.kernel)
        return self.laws[span]

    def neighbours(self, i: int) -> Tuple[int, int]:
        left = self.positions[i - 1] if i > 0 else -self.L
        right = self.positions[i + 1] if i + 1 < self.n else self.L
        return left, right

    def resample(self, i: int, u: float) -> int:
        left, right = self.neighbours(i)
        law = self.law(right - left)
        self.positions[i] = left + law.from_uniform(u)
        return law.span

    def gap_vector(self) -> Tuple[int, ...]:
        points = [-self.L] + self.positions + [self.L]
        return tuple(b - a for a, b in zip(points, points[1:]))

    def run(
        self,
        horizon: float,
        rng: np.random.Generator,
        sample_dt: Optional[float] = None,
        observable: Optional[Callable[[Tuple[int, ...]], float]] = None,
        stop: Optional[Callable[["ParticleSystem"], bool]] = None,
    ) -> "ParticleTrajectory":
        n = self.n
        t = 0.0
        events = 0
        samples: List[float] = []
        spans: List[int] = []
        next_sample = 0.0 if sample_dt else math.inf
        hit_time = 0.0 if stop is not None and stop(self) else None
        while hit_time is None:
            t_next = t + rng.standard_exponential() / n
            while next_sample <= min(t_next, horizon):
                samples.append(observable(self.gap_vector()) if observable else float(self.positions[0]))
                next_sample += sample_dt
            if t_next > horizon:
                break
            t = t_next
            events += 1
            i = int(rng.random() * n)
            spans.append(self.resample(i, rng.random()))
            self.check()
            if stop is not None and stop(self):
                hit_time = t
        return ParticleTrajectory(
            events=events, samples=np.array(samples), sample_dt=sample_dt, hit_time=hit_time, spans=spans
        )


@dataclass(frozen=True)
class ParticleTrajectory:
    events: int
    samples: np.ndarray
    sample_dt: Optional[float]
    hit_time: Optional[float]
    spans: List[int]


def particle_dynamics(
    n: int,
    L: int,
    kernel: ExcursionKernel,
    mode: str = "exact-gap",
    horizon: float = 100.0,
    seed: int = 0,
    sample_dt: float = 0.1,
    observable: Optional[Callable[[Tuple[int, ...]], float]] = None,
    positions: Optional[Sequence[int]] = None,
):
    """exact-gap: ParticleGapResult. simulate: one ParticleTrajectory, by default from the left-packed start."""
    if mode == "exact-gap":
        return particle_equilibration_gap(n, L, kernel)
    if mode != "simulate":
        raise InvalidInputError(f"unknown mode {mode!r}; expected exact-gap or simulate")
    if positions is None:
        positions = minimal_positions(n, L)
    system = ParticleSystem(kernel, L, positions)
    return system.run(horizon, stream(seed), sample_dt=sample_dt, observable=observable)


def autocorrelation_gap(samples: np.ndarray, dt: float, threshold: float = 0.05, burn_in: int = 0) -> float:
    """Decay rate of the empirical autocorrelation, fitted on lags where it stays above the threshold."""
    x = np.asarray(samples, dtype=np.float64)[burn_in:]
    if len(x) < 20:
        raise InsufficientDataError(f"{len(x)} samples are too few for an autocorrelation fit")
    x = x - x.mean()
    var = float(x @ x) / len(x)
    if var <= 0:
        raise InsufficientDataError("constant series has no autocorrelation")
    acf = []
    for lag in range(1, len(x) // 4):
        value = float(x[:-lag] @ x[lag:]) / ((len(x) - lag) * var)
        if value < threshold:
            break
        acf.append(value)
    if len(acf) < 3:
        raise InsufficientDataError(f"autocorrelation drops below {threshold} after {len(acf)} lags")
    lags = dt * np.arange(1, len(acf) + 1)
    fit = stats.linregress(lags, np.log(acf))
    return -float(fit.slope)


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> Tuple[float, float]:
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    ci = stats.binomtest(successes, trials).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def minimal_positions(n: int, L: int) -> List[int]:
    """The packed configuration ξ_i = -L + 2i."""
    return [-L + 2 * i for i in range(1, n + 1)]


def maximal_positions(n: int, L: int) -> List[int]:
    return [L - 2 * (n + 1 - i) for i in range(1, n + 1)]


@dataclass(frozen=True)
class CouplingStats:
    which: str
    n: int
    L: int
    successes: int
    trials: int
    wilson: Tuple[float, float]
    details: Dict[str, float] = field(default_factory=dict)

    @property
    def probability(self) -> float:
        return self.successes / self.trials


def _epsilon1(n: int, L: int, kernel: ExcursionKernel, n_runs: int, seed: int) -> CouplingStats:
    target = tuple(minimal_positions(n, L))
    first_ring = 0
    successes = 0
    alpha_hat = 1.0
    laws: Dict[int, ParticleLaw] = {}
    for r in range(n_runs):
        rng = stream(seed, r)
        system = ParticleSystem(kernel, L, maximal_positions(n, L), laws)
        trajectory = system.run(float(n * n), rng, stop=lambda s: tuple(s.positions) == target)
        successes += trajectory.hit_time is not None
        if trajectory.spans:
            alpha_hat = min(alpha_hat, min(system.law(s).alpha for s in trajectory.spans))
        if trajectory.hit_time is not None and trajectory.events == 1:
            first_ring += 1
    details = {
        "alpha_hat": alpha_hat,
        "lower_bound": 0.5 * alpha_hat ** n,
        "alpha_full": conditional_particle_law(-L, L, kernel).alpha if n == 1 else math.nan,
    }
    if n == 1:
        details["first_ring_rate"] = first_ring / n_runs
    return CouplingStats(
        which="epsilon1",
        n=n,
        L=L,
        successes=successes,
        trials=n_runs,
        wilson=wilson_interval(successes, n_runs),
        details=details,
    )


class _BlockResampler:
    def __init__(self, kernel: ExcursionKernel, K: int):
        self.kernel = kernel
        self.K = K
        self._samplers: Dict[int, CrossingSampler] = {}

    def __call__(self, positions: List[int], block: int, L: int, uniforms: np.ndarray):
        K = self.K
        start = (block - 1) * K
        left = positions[start - 1] if start > 0 else -L
        right = positions[start + K] if start + K < len(positions) else L
        length = right - left
        sampler = self._samplers.get(length)
        if sampler is None:
            sampler = self._samplers[length] = CrossingSampler(self.kernel, K, length)
        x = left
        for j, g in enumerate(sampler.gaps_from_uniforms(uniforms)[:K]):
            x += g
            positions[start + j] = x


def staged_marks(delta: int) -> List[int]:
    """Blocks Δ, Δ-1, ..., 1 and then 2, ..., Δ."""
    return list(range(delta, 0, -1)) + list(range(2, delta + 1))


def _block(n: int, L: int, kernel: ExcursionKernel, K: int, delta: int, n_runs: int, seed: int) -> CouplingStats:
    if K < 1 or delta < 1 or n != K * delta:
        raise InvalidInputError(f"block coupling needs n = K·Δ, got n={n}, K={K}, Δ={delta}")
    resample = _BlockResampler(kernel, K)
    successes = staged_successes = staged_events = 0
    for r in range(n_runs):
        rng = stream(seed, r)
        first, second = maximal_positions(n, L), minimal_positions(n, L)
        clocks = [np.cumsum(rng.standard_exponential(16)) for _ in range(delta)]
        marks = sorted((t, b + 1) for b, times in enumerate(clocks) for t in times if t <= 1.0)
        labels = [b for _, b in marks]
        for block in labels:
            u = rng.random(K)
            resample(first, block, L, u)
            resample(second, block, L, u)
        successes += first == second
        it = iter(labels)
        staged_events += all(any(b == want for b in it) for want in staged_marks(delta))
        first, second = maximal_positions(n, L), minimal_positions(n, L)
        for block in staged_marks(delta):
            u = rng.random(K)
            resample(first, block, L, u)
            resample(second, block, L, u)
        staged_successes += first == second
    staged_lo, staged_hi = wilson_interval(staged_successes, n_runs)
    return CouplingStats(
        which="block",
        n=n,
        L=L,
        successes=successes,
        trials=n_runs,
        wilson=wilson_interval(successes, n_runs),
        details={
            "K": K,
            "delta": delta,
            "staged_probability": staged_successes / n_runs,
            "staged_wilson_low": staged_lo,
            "staged_wilson_high": staged_hi,
            "staged_event_rate": staged_events / n_runs,
        },
    )


def coupling_experiments(
    n: int,
    L: int,
    kernel: ExcursionKernel,
    which: str,
    n_runs: int,
    seed: int,
    K: Optional[int] = None,
    delta: Optional[int] = None,
) -> CouplingStats:
    """
    epsilon1: from the right-packed start, frequency of reaching the
    left-packed configuration within time n². block: two packed starts
    coupled through shared block marks and uniforms, frequency of agreement
    at time 1 and after the staged mark sequence.
    """
    if n_runs < 1:
        raise InvalidInputError("n_runs must be >= 1")
    if which == "epsilon1":
        return _epsilon1(n, L, kernel, n_runs, seed)
    if which == "block":
        if K is None and delta is None:
            raise InvalidInputError("block coupling needs K or delta")
        K = K if K is not None else n // delta
        delta = delta if delta is not None else n // K
        return _block(n, L, kernel, K, delta, n_runs, seed)
    raise InvalidInputError(f"unknown coupling {which!r}; expected epsilon1 or block")


@dataclass(frozen=True)
class QuotientResult:
    L: int
    lam: float
    backend: str
    quotient: float
    dirichlet: float
    variance: float
    middle_mass: float
    n_samples: int = 0
    relative_error: float = 0.0


def _plus_count(signs: Sequence[int]) -> int:
    return sum(1 for s in signs if s > 0)


def _sample_signs(L: int, crossing_probs: np.ndarray, kernel: ExcursionKernel, rng: np.random.Generator, cache):
    n = int(rng.choice(len(crossing_probs), p=crossing_probs))
    first = 1 if rng.random() < 0.5 else -1
    if n == 0:
        return (first,) * L
    sampler = cache.get(n)
    if sampler is None:
        sampler = cache[n] = CrossingSampler(kernel, n, 2 * L)
    cuts = {int(c) - L for c in np.cumsum(sampler.sample(rng))[:-1]}
    signs, sign = [], first
    for x in range(-L + 1, L, 2):
        if x - 1 in cuts:
            sign = -sign
        signs.append(sign)
    return tuple(signs)


def sigma_variational_quotient(
    L: int,
    lam: float,
    n_mc: int = 0,
    seed: int = 0,
    backend: str = "auto",
    rtol: float = 0.2,
) -> QuotientResult:
    """
    𝓓(f, f)/Var_ν(f) for f = ramp(ζ/L), ζ the number of plus signs, under
    the heat-bath sign dynamics. Exact by enumeration up to SIGMA_L_MAX,
    otherwise Monte Carlo with exact draws from ν.
    """
    if backend == "auto":
        backend = "exact" if L <= SIGMA_L_MAX else "mc"
    if backend == "exact":
        chain = sigma_heatbath_chain(L, lam)
        zeta = np.bitwise_count(chain.keys).astype(np.int64)
        f = ramp(zeta / L)
        dirichlet = chain.dirichlet_form(f)
        variance = chain.variance(f)
        middle = float(chain.pi[(zeta >= L / 4) & (zeta <= 3 * L / 4)].sum())
        return QuotientResult(L, lam, "exact", dirichlet / variance, dirichlet, variance, middle)
    if backend != "mc":
        raise InvalidInputError(f"unknown backend {backend!r}")
    if n_mc < 2:
        raise InvalidInputError("the Monte Carlo backend needs n_mc >= 2")
    kernel = excursion_kernel(2 * L, lam)
    tables = segment_tables(L, lam)
    powers = kernel_powers(kernel, L)
    crossing = np.array([lam ** n * powers[n + 1][2 * L] for n in range(L)], dtype=np.float64)
    crossing /= crossing.sum()
    rng = stream(seed)
    cache: Dict[int, CrossingSampler] = {}
    f_values = np.empty(n_mc)
    local = np.empty(n_mc)
    middle = 0
    for m in range(n_mc):
        signs = _sample_signs(L, crossing, kernel, rng, cache)
        zeta = _plus_count(signs)
        f0 = float(ramp(zeta / L))
        f_values[m] = f0
        middle += L / 4 <= zeta <= 3 * L / 4
        weight = float(sigma_weight(signs, tables))
        energy = 0.0
        for i in range(L):
            flipped = signs[:i] + (-signs[i],) + signs[i + 1 :]
            df = float(ramp((zeta - signs[i]) / L)) - f0
            if df == 0.0:
                continue
            other = float(sigma_weight(flipped, tables))
            energy += other / (weight + other) * df * df
        local[m] = 0.5 * energy
    dirichlet = float(local.mean())
    variance = float(f_values.var(ddof=1))
    rel = float(local.std(ddof=1) / math.sqrt(n_mc) / dirichlet) if dirichlet > 0 else math.inf
    if rel > rtol:
        logger.warning(f"sigma quotient at L={L}: relative error {rel:.2f} above {rtol}; increase n_mc")
    return QuotientResult(
        L, lam, "mc", dirichlet / variance, dirichlet, variance, middle / n_mc, n_samples=n_mc, relative_error=rel
    )
