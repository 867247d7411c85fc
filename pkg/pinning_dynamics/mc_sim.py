# pinning_dynamics/mc_sim.py

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from pinning_dynamics.config import default_ell, zero_cap
from pinning_dynamics.errors import (
    InsufficientDataError,
    InvalidInputError,
    OrderViolationError,
    ScheduleError,
)
from pinning_dynamics.polymer_core import BoundaryPair, PathConfig, leq, maximal_path, minimal_path
from pinning_dynamics.rng import EventDraws, stream

logger = logging.getLogger(__name__)

ENGINES = ("naive", "active-set")


@dataclass(frozen=True)
class DynamicsSpec:
    L: int
    lam: float
    bounds: Optional[BoundaryPair] = None
    restrict_o: Optional[float] = None
    ell: Optional[int] = None
    engine: str = "naive"

    def __post_init__(self):
        if self.L < 1:
            raise InvalidInputError(f"L must be >= 1, got {self.L}")
        if self.lam <= 0:
            raise InvalidInputError(f"lambda must be positive, got {self.lam}")
        if self.engine not in ENGINES:
            raise InvalidInputError(f"unknown engine {self.engine!r}; expected one of {', '.join(ENGINES)}")
        if self.bounds is not None and self.bounds.L != self.L:
            raise InvalidInputError("bounds have a different L")
        if self.restrict_o is not None and self.restrict_o <= 0:
            raise InvalidInputError("c_o must be positive")

    @property
    def ell_used(self) -> int:
        return self.ell if self.ell is not None else default_ell(self.L)

    def with_engine(self, engine: str) -> "DynamicsSpec":
        return DynamicsSpec(self.L, self.lam, self.bounds, self.restrict_o, self.ell, engine)


def _omega_o_ok(h: List[int], cap: int) -> bool:
    chi = 0
    zeros_in_segment = 0
    for p in range(1, len(h) - 1):
        if h[p] != 0:
            continue
        if 2 <= p <= len(h) - 3 and h[p - 1] != h[p + 1]:
            chi += 1
            if chi > cap or zeros_in_segment > cap:
                return False
            zeros_in_segment = 0
        else:
            zeros_in_segment += 1
    return chi <= cap and zeros_in_segment <= cap


class _Polymer:
    """Mutable heights of one replica with its integer key kept in step."""

    def __init__(self, spec: DynamicsSpec, path: PathConfig):
        if path.L != spec.L:
            raise InvalidInputError(f"initial path has L={path.L}, dynamics have L={spec.L}")
        self.L = spec.L
        self.h = [int(v) for v in path.heights]
        self.key = path.key
        self.theta_one = spec.lam / (spec.lam + 1.0)
        self.theta_minus_one = 1.0 / (spec.lam + 1.0)
        bounds = spec.bounds
        if bounds is not None and not bounds.is_free:
            self.floor = [int(v) for v in bounds.floor.heights]
            self.ceiling = [int(v) for v in bounds.ceiling.heights]
            if not bounds.contains(path):
                raise InvalidInputError(f"initial path {path} violates the bounds")
        else:
            self.floor = self.ceiling = None
        self.cap = zero_cap(spec.L, spec.restrict_o) if spec.restrict_o is not None else None
        if self.cap is not None and not _omega_o_ok(self.h, self.cap):
            raise InvalidInputError(f"initial path {path} is outside Ω^o")

    def threshold(self, a: int) -> float:
        if a == 1:
            return self.theta_one
        if a == -1:
            return self.theta_minus_one
        return 0.5

    def proposal(self, p: int, u: float) -> Optional[int]:
        """New height at p from the heat-bath rule with uniform u, or None for a null event."""
        h = self.h
        a = h[p - 1]
        if a != h[p + 1]:
            return None
        new = a - 1 if u < self.threshold(a) else a + 1
        if new == h[p]:
            return None
        if self.floor is not None and not (self.floor[p] <= new <= self.ceiling[p]):
            return None
        if self.cap is not None:
            old = h[p]
            h[p] = new
            ok = _omega_o_ok(h, self.cap)
            h[p] = old
            if not ok:
                return None
        return new

    def apply(self, p: int, new: int):
        self.h[p] = new
        two_L = 2 * self.L
        self.key ^= (1 << (two_L - p)) | (1 << (two_L - 1 - p))

    def path(self) -> PathConfig:
        return PathConfig.from_heights(self.h)


class _ActiveSet:
    """Sites p with η_{p-1} = η_{p+1}, kept as a list with O(1) insert, delete and uniform pick."""

    def __init__(self, h: List[int]):
        self.items = [p for p in range(1, len(h) - 1) if h[p - 1] == h[p + 1]]
        self.pos = {p: i for i, p in enumerate(self.items)}
        self.last = len(h) - 2

    def __len__(self) -> int:
        return len(self.items)

    def refresh(self, p: int, h: List[int]):
        if p < 1 or p > self.last:
            return
        flippable = h[p - 1] == h[p + 1]
        if flippable and p not in self.pos:
            self.pos[p] = len(self.items)
            self.items.append(p)
        elif not flippable and p in self.pos:
            i = self.pos.pop(p)
            tail = self.items.pop()
            if tail != p:
                self.items[i] = tail
                self.pos[tail] = i


class PhaseSet:
    """Membership in Ω^+ ("plus"), Ω^- ("minus") or neither, tracked by window counts."""

    KINDS = ("plus", "minus", "neither")

    def __init__(self, kind: str, L: int, ell: int):
        if kind not in self.KINDS:
            raise InvalidInputError(f"unknown phase set {kind!r}")
        self.kind = kind
        self.name = {"plus": "omega-plus", "minus": "omega-minus", "neither": "outside-phases"}[kind]
        self.lo, self.hi = ell + 1, 2 * L - ell - 1
        self.width = max(0, self.hi - self.lo + 1)

    def reset(self, poly: _Polymer):
        window = poly.h[self.lo : self.hi + 1]
        self.n_pos = sum(1 for v in window if v > 0)
        self.n_neg = sum(1 for v in window if v < 0)

    def moved(self, p: int, old: int, new: int):
        if self.lo <= p <= self.hi:
            self.n_pos += (new > 0) - (old > 0)
            self.n_neg += (new < 0) - (old < 0)

    def contains(self, poly: _Polymer) -> bool:
        plus = self.n_pos == self.width
        minus = self.n_neg == self.width
        if self.kind == "plus":
            return plus
        if self.kind == "minus":
            return minus
        return not plus and not minus


class KeySet:
    """A set of paths given by their integer keys, e.g. S^{0,-} from an exact eigenfunction."""

    def __init__(self, keys: Iterable[int], name: str = "keys"):
        self.keys: FrozenSet[int] = frozenset(int(k) for k in keys)
        self.name = name

    def reset(self, poly: _Polymer):
        pass

    def moved(self, p: int, old: int, new: int):
        pass

    def contains(self, poly: _Polymer) -> bool:
        return poly.key in self.keys


TargetSet = Union[PhaseSet, KeySet]


def make_target(name: str, L: int, ell: Optional[int] = None, keys: Optional[Iterable[int]] = None) -> TargetSet:
    """omega-minus (the phase Ω^-) or s0-minus (a key set, usually {g < 0})."""
    ell = default_ell(L) if ell is None else ell
    if name == "omega-minus":
        return PhaseSet("minus", L, ell)
    if name == "s0-minus":
        if keys is None:
            raise InvalidInputError("the s0-minus target needs the keys of {g < 0}")
        return KeySet(keys, name="s0-minus")
    raise InvalidInputError(f"unknown target {name!r}; expected omega-minus or s0-minus")


def _observable_table(L: int, ell: int) -> Dict[str, Callable[[np.ndarray], float]]:
    lo, hi = ell + 1, 2 * L - ell

    def zeros(h):
        return float(np.sum(h[1:-1] == 0))

    def crossings(h):
        inner = h[2:-2]
        return float(np.sum((inner == 0) & (h[1:-3] != h[3:-1])))

    def in_plus(h):
        return float(np.all(h[lo:hi] > 0))

    def in_minus(h):
        return float(np.all(h[lo:hi] < 0))

    return {
        "height_sum": lambda h: float(h.sum()),
        "height_mid": lambda h: float(h[L]),
        "zeros": zeros,
        "crossings": crossings,
        "in_plus": in_plus,
        "in_minus": in_minus,
    }


OBSERVABLE_NAMES = ("height_sum", "height_mid", "zeros", "crossings", "in_plus", "in_minus")


@dataclass(frozen=True)
class CensoringWindow:
    start: float
    end: float
    sites: Optional[FrozenSet[int]] = None


class CensoringSchedule:
    """Time windows partitioning [0, T], each with the set of sites whose updates are kept."""

    def __init__(self, windows: Sequence[CensoringWindow]):
        windows = sorted(windows, key=lambda w: w.start)
        if not windows:
            raise ScheduleError("a schedule needs at least one window")
        if windows[0].start != 0:
            raise ScheduleError(f"the first window starts at {windows[0].start}, expected 0")
        for prev, nxt in zip(windows, windows[1:]):
            if nxt.start < prev.end:
                raise ScheduleError(f"windows [{prev.start}, {prev.end}) and [{nxt.start}, {nxt.end}) overlap")
            if nxt.start > prev.end:
                raise ScheduleError(f"gap in the schedule between {prev.end} and {nxt.start}")
        for w in windows:
            if w.end <= w.start:
                raise ScheduleError(f"empty window [{w.start}, {w.end})")
        self.windows = tuple(windows)
        self._cursor = 0

    @property
    def horizon(self) -> float:
        return self.windows[-1].end

    def allowed(self, t: float, L: int) -> Optional[FrozenSet[int]]:
        """Allowed internal positions p at time t; None means every site."""
        while self._cursor < len(self.windows) - 1 and t >= self.windows[self._cursor].end:
            self._cursor += 1
        sites = self.windows[self._cursor].sites
        return None if sites is None else frozenset(x + L for x in sites)

    def rewind(self):
        self._cursor = 0


def three_phase_schedule(
    L: int,
    ell: Optional[int] = None,
    eps1: float = 0.5,
    T2: Optional[float] = None,
    T1: Optional[float] = None,
) -> CensoringSchedule:
    """I₂ for T₂, then I₁ ∪ I₃ for T₁, then I₂ for T₂ again."""
    ell = default_ell(L) if ell is None else ell
    T2 = L ** (2.0 + eps1) if T2 is None else T2
    T1 = L ** eps1 if T1 is None else T1
    interior = range(-L + 1, L)
    i1 = {x for x in interior if -L <= x < -L + ell ** 2}
    i2 = {x for x in interior if -L + ell <= x <= L - ell}
    i3 = {x for x in interior if L - ell ** 2 <= x <= L}
    return CensoringSchedule(
        [
            CensoringWindow(0.0, T2, frozenset(i2)),
            CensoringWindow(T2, T2 + T1, frozenset(i1 | i3)),
            CensoringWindow(T2 + T1, 2.0 * T2 + T1, frozenset(i2)),
        ]
    )


def parse_schedule(rows: Sequence[dict]) -> CensoringSchedule:
    """Schedule from records {start, end, sites}; sites null means every site."""
    windows = []
    for row in rows:
        sites = row.get("sites")
        windows.append(CensoringWindow(float(row["start"]), float(row["end"]), None if sites is None else frozenset(sites)))
    return CensoringSchedule(windows)


@dataclass
class TrajectoryRecord:
    seed: int
    replica: int
    engine: str
    horizon: float
    events: int = 0
    flips: int = 0
    sample_times: Tuple[float, ...] = ()
    samples: Dict[str, List[float]] = field(default_factory=dict)
    target: Optional[str] = None
    hitting_time: Optional[float] = None
    censored: bool = False
    occupation: Optional[str] = None
    occupation_time: float = 0.0
    final: Optional[PathConfig] = None
    site_flips: Dict[int, int] = field(default_factory=dict)
    event_times: List[float] = field(default_factory=list)
    event_sites: List[int] = field(default_factory=list)


def _run(
    spec: DynamicsSpec,
    eta0: PathConfig,
    horizon: float,
    seed: int,
    replica: int,
    observables: Sequence[str],
    sample_times: Sequence[float],
    target: Optional[TargetSet],
    occupation: Optional[TargetSet],
    schedule: Optional[CensoringSchedule],
    record_events: bool,
) -> TrajectoryRecord:
    if horizon <= 0:
        raise InvalidInputError("horizon must be positive")
    poly = _Polymer(spec, eta0)
    L = spec.L
    table = _observable_table(L, spec.ell_used)
    unknown = [name for name in observables if name not in table]
    if unknown:
        raise InvalidInputError(f"unknown observables {unknown}; expected any of {', '.join(OBSERVABLE_NAMES)}")
    engine = "naive" if schedule is not None else spec.engine
    record = TrajectoryRecord(
        seed=seed,
        replica=replica,
        engine=engine,
        horizon=horizon,
        sample_times=tuple(sorted(sample_times)),
        samples={name: [] for name in observables},
        target=None if target is None else target.name,
        occupation=None if occupation is None else occupation.name,
    )
    draws = EventDraws(stream(seed, replica))
    n_sites = 2 * L - 1
    active = _ActiveSet(poly.h) if engine == "active-set" else None
    if schedule is not None:
        schedule.rewind()
    for tracker in (target, occupation):
        if tracker is not None:
            tracker.reset(poly)
    site_flips = [0] * (2 * L + 1)
    pending = list(record.sample_times)
    cursor = 0
    t = 0.0

    def take_samples(until: float):
        nonlocal cursor
        if cursor >= len(pending) or pending[cursor] >= until:
            return
        heights = np.asarray(poly.h)
        while cursor < len(pending) and pending[cursor] < until:
            for name in observables:
                record.samples[name].append(table[name](heights))
            cursor += 1

    if target is not None and target.contains(poly):
        record.hitting_time = 0.0
    while record.hitting_time is None:
        e, v, u = draws.next()
        rate = n_sites if active is None else len(active)
        t_next = t + e / rate
        end = min(t_next, horizon)
        if occupation is not None and occupation.contains(poly):
            record.occupation_time += end - t
        take_samples(min(t_next, math.nextafter(horizon, math.inf)))
        if t_next > horizon:
            t = horizon
            break
        t = t_next
        record.events += 1
        p = 1 + int(v * n_sites) if active is None else active.items[int(v * rate)]
        if schedule is not None:
            allowed = schedule.allowed(t, L)
            if allowed is not None and p not in allowed:
                continue
        new = poly.proposal(p, u)
        if new is None:
            continue
        old = poly.h[p]
        poly.apply(p, new)
        record.flips += 1
        site_flips[p] += 1
        if active is not None:
            active.refresh(p - 1, poly.h)
            active.refresh(p + 1, poly.h)
        for tracker in (target, occupation):
            if tracker is not None:
                tracker.moved(p, old, new)
        if record_events:
            record.event_times.append(t)
            record.event_sites.append(p - L)
        if target is not None and target.contains(poly):
            record.hitting_time = t
    record.censored = target is not None and record.hitting_time is None
    record.final = poly.path()
    record.site_flips = {p - L: c for p, c in enumerate(site_flips) if c}
    return record


def simulate_heatbath(
    spec: DynamicsSpec,
    eta0: PathConfig,
    horizon: float,
    seed: int,
    observables: Sequence[str] = (),
    sample_times: Sequence[float] = (),
    target: Optional[TargetSet] = None,
    occupation: Optional[TargetSet] = None,
    replica: int = 0,
    record_events: bool = False,
) -> TrajectoryRecord:
    """
    One continuous-time trajectory. The naive engine rings a global clock of
    rate 2L-1 and picks a uniform interior site; the active-set engine rings
    at rate |F| over the flippable sites F. With a target the run stops at
    the hitting time.
    """
    return _run(spec, eta0, horizon, seed, replica, observables, sample_times, target, occupation, None, record_events)


def censored_run(
    spec: DynamicsSpec,
    schedule: CensoringSchedule,
    eta0: PathConfig,
    seed: int,
    observables: Sequence[str] = (),
    sample_times: Sequence[float] = (),
    replica: int = 0,
    record_events: bool = False,
) -> TrajectoryRecord:
    """Naive-engine run over [0, T] discarding updates at sites outside the window's allowed set."""
    return _run(
        spec, eta0, schedule.horizon, seed, replica, observables, sample_times, None, None, schedule, record_events
    )


@dataclass
class CouplingRun:
    initial: Tuple[PathConfig, ...]
    seed: int
    replica: int
    horizon: float
    ordered_pairs: List[Tuple[int, int]]
    sample_times: Tuple[float, ...] = ()
    order_flags: List[bool] = field(default_factory=list)
    coalesced_flags: List[bool] = field(default_factory=list)
    coalescence_time: Optional[float] = None
    events: int = 0
    order_checks: int = 0
    final: Tuple[PathConfig, ...] = ()


def grand_coupling_run(
    spec: DynamicsSpec,
    initial: Sequence[PathConfig],
    horizon: float,
    seed: int,
    replica: int = 0,
    sample_times: Sequence[float] = (),
    stop_at_coalescence: bool = True,
) -> CouplingRun:
    """
    All replicas share the clock, the site and the uniform u; the update
    moves down iff u < θ(h), which keeps ordered replicas ordered.
    """
    if spec.restrict_o is not None:
        raise InvalidInputError("the grand coupling is not monotone under the Ω^o restriction")
    if not initial:
        raise InvalidInputError("at least one initial condition is needed")
    polys = [_Polymer(spec, path) for path in initial]
    pairs = [
        (i, j)
        for i in range(len(initial))
        for j in range(len(initial))
        if i != j and leq(initial[i], initial[j])
    ]
    run = CouplingRun(
        initial=tuple(initial),
        seed=seed,
        replica=replica,
        horizon=horizon,
        ordered_pairs=pairs,
        sample_times=tuple(sorted(sample_times)),
    )
    draws = EventDraws(stream(seed, replica))
    n_sites = 2 * spec.L - 1
    distinct = len({poly.key for poly in polys})
    if distinct == 1:
        run.coalescence_time = 0.0
    pending = list(run.sample_times)
    cursor = 0
    t = 0.0
    while True:
        e, v, u = draws.next()
        t_next = t + e / n_sites
        while cursor < len(pending) and pending[cursor] < t_next and pending[cursor] <= horizon:
            run.order_flags.append(True)
            run.coalesced_flags.append(distinct == 1)
            cursor += 1
        if t_next > horizon:
            break
        if stop_at_coalescence and distinct == 1 and cursor >= len(pending):
            break
        t = t_next
        run.events += 1
        p = 1 + int(v * n_sites)
        changed = False
        for poly in polys:
            new = poly.proposal(p, u)
            if new is not None:
                poly.apply(p, new)
                changed = True
        if not changed:
            continue
        for i, j in pairs:
            run.order_checks += 1
            if polys[i].h[p] > polys[j].h[p]:
                raise OrderViolationError(
                    f"replicas {i} and {j} crossed at site {p - spec.L} at t={t:.6g} (seed {seed}, replica {replica})"
                )
        distinct = len({poly.key for poly in polys})
        if distinct == 1 and run.coalescence_time is None:
            run.coalescence_time = t
    run.final = tuple(poly.path() for poly in polys)
    return run


def extremal_pair(spec: DynamicsSpec) -> Tuple[PathConfig, PathConfig]:
    """(floor, ceiling) of the state space: (∨, ∧) unless the dynamics carry bounds."""
    if spec.bounds is not None:
        return spec.bounds.floor, spec.bounds.ceiling
    return minimal_path(spec.L), maximal_path(spec.L)


@dataclass(frozen=True)
class HittingSample:
    target: str
    times: np.ndarray
    censored: np.ndarray
    occupation: Optional[np.ndarray]
    horizon: float
    seed: int

    @property
    def n_runs(self) -> int:
        return len(self.times)

    @property
    def censored_count(self) -> int:
        return int(self.censored.sum())

    @property
    def mean_uncensored(self) -> float:
        hit = self.times[~self.censored]
        return float(hit.mean()) if len(hit) else math.nan

    @property
    def rate_mle(self) -> float:
        """Exponential rate MLE with right censoring: #hits / total observed time."""
        total = float(self.times.sum())
        return float((~self.censored).sum()) / total if total > 0 else math.nan

    def ks_pvalue(self) -> float:
        hit = self.times[~self.censored]
        if len(hit) < 2:
            raise InsufficientDataError("fewer than two uncensored hitting times")
        return float(stats.kstest(hit / hit.mean(), "expon").pvalue)

    def kaplan_meier(self) -> Tuple[np.ndarray, np.ndarray]:
        """Product-limit survival estimate at the distinct uncensored times."""
        order = np.argsort(self.times, kind="stable")
        times, censored = self.times[order], self.censored[order]
        at_risk = len(times) - np.arange(len(times))
        factors = np.where(censored, 1.0, 1.0 - 1.0 / at_risk)
        survival = np.cumprod(factors)
        keep = ~censored
        return times[keep], survival[keep]


def hitting_time_sample(
    spec: DynamicsSpec,
    eta0: Union[PathConfig, Sequence[PathConfig]],
    target: TargetSet,
    n_runs: int,
    seed: int,
    horizon: float,
    occupation: Optional[TargetSet] = None,
) -> HittingSample:
    """n_runs independent hitting times on substreams (seed, 0..n_runs-1); censored runs are flagged."""
    if n_runs < 1:
        raise InvalidInputError("n_runs must be >= 1")
    starts = [eta0] if isinstance(eta0, PathConfig) else list(eta0)
    times = np.empty(n_runs)
    censored = np.zeros(n_runs, dtype=bool)
    occ = np.empty(n_runs) if occupation is not None else None
    for r in range(n_runs):
        record = simulate_heatbath(
            spec, starts[r % len(starts)], horizon, seed, target=target, occupation=occupation, replica=r
        )
        censored[r] = record.censored
        times[r] = horizon if record.censored else record.hitting_time
        if occ is not None:
            occ[r] = record.occupation_time
    if censored.any():
        logger.warning(f"{int(censored.sum())} of {n_runs} runs hit the horizon {horizon:g} before {target.name}")
    return HittingSample(target=target.name, times=times, censored=censored, occupation=occ, horizon=horizon, seed=seed)


@dataclass(frozen=True)
class GapEstimate:
    gap: float
    stderr: float
    low: float
    high: float
    n_points: int
    times: np.ndarray
    survival: np.ndarray
    censored: int


def gap_estimate_from_coalescence(
    spec: DynamicsSpec,
    horizon: float,
    n_runs: int,
    seed: int,
    n_grid: int = 200,
    min_count: int = 10,
) -> GapEstimate:
    """
    Slope of log P̂(T_c > t) on its tail, T_c the coalescence time of the
    extremal pair under the grand coupling.
    """
    bottom, top = extremal_pair(spec)
    coalescence = np.empty(n_runs)
    for r in range(n_runs):
        run = grand_coupling_run(spec, [bottom, top], horizon, seed, replica=r)
        coalescence[r] = math.inf if run.coalescence_time is None else run.coalescence_time
    grid = np.linspace(0.0, horizon, n_grid + 1)[1:]
    survival = (coalescence[None, :] > grid[:, None]).mean(axis=1)
    tail = (survival * n_runs >= min_count) & (survival <= 0.5)
    if tail.sum() < 3:
        raise InsufficientDataError(
            f"no linear tail: {int(tail.sum())} grid points with P̂ ≤ 0.5 and at least {min_count} survivors"
        )
    fit = stats.linregress(grid[tail], np.log(survival[tail]))
    gap = -float(fit.slope)
    band = 1.96 * float(fit.stderr)
    censored = int(np.isinf(coalescence).sum())
    logger.info(f"Coalescence gap estimate {gap:.4e} ± {band:.1e} from {int(tail.sum())} tail points")
    return GapEstimate(
        gap=gap,
        stderr=float(fit.stderr),
        low=gap - band,
        high=gap + band,
        n_points=int(tail.sum()),
        times=grid,
        survival=survival,
        censored=censored,
    )
