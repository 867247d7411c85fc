# pinning_dynamics/spectral.py

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from pinning_dynamics.config import (
    DEFAULT_L_MAX,
    DENSE_AUTO_LIMIT,
    DENSE_STATE_LIMIT,
    SIGMA_L_MAX,
    check_capacity,
    default_ell,
    zero_cap,
)
from pinning_dynamics.equilibrium import (
    segment_tables,
    sigma_flip_probability,
    sigma_weight,
)
from pinning_dynamics.errors import ConvergenceError, DisconnectedError, InvalidInputError
from pinning_dynamics.polymer_core import BoundaryPair, PathSpace, constrained_space, maximal_path

logger = logging.getLogger(__name__)

DEGENERACY_RTOL = 1e-8
SIGN_BAND = 1e-10
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class ReversibleChain:
    """
    A continuous-time chain on states 0..n-1: off-diagonal rates c(i, j) as
    a CSR matrix and unnormalized stationary weights.
    """

    rates: sp.csr_matrix
    weights: np.ndarray
    label: str
    reference_index: int = -1
    mirror: Optional[np.ndarray] = None
    keys: Optional[np.ndarray] = None
    space: Optional[PathSpace] = field(default=None, repr=False)
    L: Optional[int] = None
    lam: Optional[float] = None

    def __post_init__(self):
        n = self.rates.shape[0]
        if self.rates.shape != (n, n) or len(self.weights) != n:
            raise InvalidInputError(f"{self.label}: rates and weights disagree on the state count")
        if n == 0:
            raise InvalidInputError(f"{self.label}: empty state space")
        if np.any(self.weights <= 0):
            raise InvalidInputError(f"{self.label}: stationary weights must be positive")
        if self.rates.nnz and self.rates.data.min() < 0:
            raise InvalidInputError(f"{self.label}: rates must be non-negative")
        if self.reference_index < 0:
            object.__setattr__(self, "reference_index", n - 1)

    @property
    def n_states(self) -> int:
        return self.rates.shape[0]

    @property
    def pi(self) -> np.ndarray:
        return self.weights / self.weights.sum()

    @property
    def exit_rates(self) -> np.ndarray:
        return np.asarray(self.rates.sum(axis=1)).ravel()

    def generator(self) -> sp.csr_matrix:
        """𝓛 as a matrix; rows sum to zero."""
        return (self.rates - sp.diags(self.exit_rates)).tocsr()

    def symmetrized(self) -> sp.csr_matrix:
        """D^{1/2}(-𝓛)D^{-1/2}, symmetric by detailed balance."""
        root = np.sqrt(self.pi)
        off = sp.diags(root) @ self.rates @ sp.diags(1.0 / root)
        off = 0.5 * (off + off.T)
        return (sp.diags(self.exit_rates) - off).tocsr()

    def check_detailed_balance(self) -> float:
        """Largest relative mismatch |π_i c_ij - π_j c_ji| / max over stored pairs."""
        flux = (sp.diags(self.pi) @ self.rates).tocsr()
        flux_t = flux.T.tocsr()
        diff = (flux - flux_t).tocoo()
        if diff.nnz == 0:
            return 0.0
        scale = np.asarray(flux.maximum(flux_t)[diff.row, diff.col]).ravel()
        return float(np.max(np.abs(diff.data) / scale))

    def row_sum_defect(self) -> float:
        return float(np.max(np.abs(np.asarray(self.generator().sum(axis=1)).ravel())))

    def check_connected(self):
        n_components, _ = connected_components(self.rates, directed=False)
        if n_components > 1:
            raise DisconnectedError(self.label, n_components)

    def dirichlet_form(self, f: np.ndarray) -> float:
        """𝓔(f, f) = ½ Σ π(x)c(x, y)(f(y) - f(x))²."""
        coo = self.rates.tocoo()
        diff = f[coo.col] - f[coo.row]
        return float(0.5 * np.sum(self.pi[coo.row] * coo.data * diff ** 2))

    def variance(self, f: np.ndarray) -> float:
        mean = float(self.pi @ f)
        return float(self.pi @ (f - mean) ** 2)

    def restrict(self, mask: np.ndarray, label: Optional[str] = None) -> "ReversibleChain":
        """Reflecting restriction: moves leaving the subset are suppressed."""
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise InvalidInputError(f"{self.label}: cannot restrict to an empty subset")
        kept = np.flatnonzero(mask)
        new_index = -np.ones(self.n_states, dtype=np.int64)
        new_index[kept] = np.arange(len(kept))
        mirror = None
        if self.mirror is not None and np.all(mask[self.mirror] == mask):
            mirror = new_index[self.mirror[kept]]
        reference = int(new_index[self.reference_index]) if mask[self.reference_index] else -1
        return ReversibleChain(
            rates=self.rates[kept][:, kept].tocsr(),
            weights=self.weights[kept],
            label=label or f"{self.label}-restricted",
            reference_index=reference,
            mirror=mirror,
            keys=None if self.keys is None else self.keys[kept],
            space=None if self.space is None else self.space.subset(mask),
            L=self.L,
            lam=self.lam,
        )


def _chain_from_triplets(n, rows, cols, vals, weights, **kwargs) -> ReversibleChain:
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    vals = np.concatenate(vals) if vals else np.zeros(0)
    rates = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    rates.eliminate_zeros()
    return ReversibleChain(rates=rates, weights=np.asarray(weights, dtype=np.float64), **kwargs)


def heatbath_threshold(h: np.ndarray, lam: float) -> np.ndarray:
    """θ(h): probability that a site with both neighbours at h is resampled to h - 1."""
    return np.where(h == 1, lam / (lam + 1.0), np.where(h == -1, 1.0 / (lam + 1.0), 0.5))


def build_generator(
    L: int,
    lam: float,
    bounds: Optional[BoundaryPair] = None,
    restrict_o: Optional[float] = None,
    ell: Optional[int] = None,
    L_max: int = DEFAULT_L_MAX,
) -> ReversibleChain:
    """Heat-bath generator on the bridges inside the bounds (and Ω^o when restrict_o is given)."""
    if lam <= 0:
        raise InvalidInputError(f"lambda must be positive, got {lam}")
    ell = default_ell(L) if ell is None else ell
    space = constrained_space(L, bounds, ell, restrict_o, L_max)
    heights = space.heights.astype(np.int64)
    n = len(space)
    two_L = 2 * L
    rows, cols, vals = [], [], []
    for p in range(1, two_L):
        h = heights[:, p - 1]
        idx = np.flatnonzero(h == heights[:, p + 1])
        if idx.size == 0:
            continue
        hh = h[idx]
        theta = heatbath_threshold(hh, lam)
        rate = np.where(heights[idx, p] > hh, theta, 1.0 - theta)
        flip = (np.int64(1) << np.int64(two_L - p)) | (np.int64(1) << np.int64(two_L - 1 - p))
        target, found = space.lookup(space.keys[idx] ^ flip)
        rows.append(idx[found])
        cols.append(target[found])
        vals.append(rate[found])
    n_zeros, _, _ = space.statistics
    weights = np.power(float(lam), n_zeros.astype(np.float64))
    ref, found = space.lookup(np.array([maximal_path(L).key]))
    label = "polymer" if restrict_o is None else "polymer-omega-o"
    if bounds is not None and not bounds.is_free:
        label += "-bounded"
    chain = _chain_from_triplets(
        n,
        rows,
        cols,
        vals,
        weights,
        label=label,
        reference_index=int(ref[0]) if found[0] else n - 1,
        mirror=space.mirror_permutation(),
        keys=space.keys,
        space=space,
        L=L,
        lam=float(lam),
    )
    chain.check_connected()
    logger.info(f"Built {label} generator: L={L}, lambda={lam}, {n} states, {chain.rates.nnz} rates")
    return chain


@dataclass(frozen=True, eq=False)
class SpectralResult:
    gap: float
    g: np.ndarray
    pi: np.ndarray
    mode: str
    residual: float
    multiplicity: int = 1
    eigenvalues: Optional[np.ndarray] = None
    eigenvectors: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def t_rel(self) -> float:
        return 1.0 / self.gap

    @property
    def has_full_decomposition(self) -> bool:
        return self.eigenvectors is not None


def _operator_norm_bound(S) -> float:
    if sp.issparse(S):
        return float(spla.norm(S, 1))
    return float(np.abs(S).sum(axis=0).max())


def _antisymmetric_member(vectors: np.ndarray, mirror: np.ndarray) -> np.ndarray:
    projected = 0.5 * (vectors - vectors[mirror])
    u, s, _ = np.linalg.svd(projected, full_matrices=False)
    if s[0] < 0.5:
        raise ConvergenceError("no antisymmetric eigenfunction in the gap eigenspace", residual=float(s[0]))
    return u[:, 0]


def _gap_from_pairs(chain: ReversibleChain, vals: np.ndarray, vecs: np.ndarray):
    """Pick gap and eigenvector from eigenpairs of the symmetrized operator, zero mode removed."""
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    gap = float(vals[0])
    if gap <= 0:
        raise ConvergenceError(f"{chain.label}: non-positive gap {gap}", residual=abs(gap))
    cluster = np.flatnonzero(vals <= gap * (1.0 + DEGENERACY_RTOL) + 1e-300)
    phi = vecs[:, 0]
    if len(cluster) > 1:
        if chain.mirror is None:
            logger.warning(f"{chain.label}: gap has multiplicity {len(cluster)} and no mirror map")
        else:
            phi = _antisymmetric_member(vecs[:, cluster], chain.mirror)
    return gap, phi / np.linalg.norm(phi), len(cluster)


def _finish(chain, S, gap, phi, mode, multiplicity, vals=None, vecs=None) -> SpectralResult:
    residual = float(np.linalg.norm(S @ phi - gap * phi)) / max(_operator_norm_bound(S), 1e-300)
    if residual > RESIDUAL_TOL:
        raise ConvergenceError(f"{chain.label}: eigenpair residual {residual:.3e}", residual=residual)
    pi = chain.pi
    g = phi / np.sqrt(pi)
    if g[chain.reference_index] < 0:
        g = -g
    return SpectralResult(
        gap=gap,
        g=g,
        pi=pi,
        mode=mode,
        residual=residual,
        multiplicity=multiplicity,
        eigenvalues=vals,
        eigenvectors=vecs,
    )


def solve_spectrum(
    chain: ReversibleChain,
    mode: str = "auto",
    dense_limit: int = DENSE_STATE_LIMIT,
    n_eig: int = 4,
) -> SpectralResult:
    """Spectral gap and principal eigenfunction g of -𝓛, with g(reference) > 0."""
    n = chain.n_states
    if n < 2:
        raise InvalidInputError(f"{chain.label}: a single state has no spectral gap")
    if mode not in ("auto", "dense", "sparse"):
        raise InvalidInputError(f"unknown eigensolver mode {mode!r}")
    if mode == "auto":
        mode = "dense" if n <= min(DENSE_AUTO_LIMIT, dense_limit) else "sparse"
    if mode == "sparse" and n <= n_eig + 1:
        mode = "dense"
    S = chain.symmetrized()

    if mode == "dense":
        check_capacity("DENSE_STATE_LIMIT", dense_limit, n, f"dense eigensolve of {chain.label}")
        dense = S.toarray()
        vals, vecs = la.eigh(dense)
        gap, phi, mult = _gap_from_pairs(chain, vals[1:], vecs[:, 1:])
        result = _finish(chain, dense, gap, phi, "dense", mult, vals, vecs)
    else:
        root = np.sqrt(chain.pi)
        sigma = -1e-4 * _operator_norm_bound(S)
        try:
            vals, vecs = spla.eigsh(S.tocsc(), k=min(n_eig, n - 1), sigma=sigma, which="LM", tol=1e-12)
            zero_mode = int(np.argmax(np.abs(vecs.T @ root)))
            keep = np.arange(len(vals)) != zero_mode
            gap, phi, mult = _gap_from_pairs(chain, vals[keep], vecs[:, keep])
            result = _finish(chain, S, gap, phi, "sparse", mult)
        except (spla.ArpackNoConvergence, ConvergenceError, RuntimeError) as e:
            logger.warning(f"{chain.label}: shift-invert eigsh failed ({e}); falling back to LOBPCG")
            start = np.random.default_rng(0).standard_normal((n, min(n_eig, n - 2)))
            vals, vecs = spla.lobpcg(S, start, Y=root[:, None], largest=False, tol=1e-10, maxiter=5000)
            gap, phi, mult = _gap_from_pairs(chain, vals, vecs)
            result = _finish(chain, S, gap, phi, "lobpcg", mult)
    logger.info(f"{chain.label}: gap={result.gap:.6e} (T_rel={result.t_rel:.6e}, mode={result.mode})")
    return result


@dataclass(frozen=True)
class SignSets:
    plus: np.ndarray
    minus: np.ndarray
    n_excluded: int


def sign_sets(result: SpectralResult, band: float = SIGN_BAND) -> SignSets:
    """S^{0,+} = {g > band} and S^{0,-} = {g < -band}; states inside the band are excluded."""
    plus = result.g > band
    minus = result.g < -band
    return SignSets(plus=plus, minus=minus, n_excluded=int(np.sum(~plus & ~minus)))


def point_mass(chain: ReversibleChain, index: int) -> np.ndarray:
    mu = np.zeros(chain.n_states)
    mu[index] = 1.0
    return mu


def evolve(chain: ReversibleChain, result: Optional[SpectralResult], mu: np.ndarray, times: Sequence[float]) -> np.ndarray:
    """Rows ν_t = μP_t for each t, by eigen-expansion when available, else expm_multiply."""
    mu = np.asarray(mu, dtype=np.float64)
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    if result is not None and result.has_full_decomposition:
        root = np.sqrt(result.pi)
        coeff = result.eigenvectors.T @ (mu / root)
        decay = np.exp(-np.outer(times, result.eigenvalues))
        return ((decay * coeff) @ result.eigenvectors.T) * root
    QT = chain.generator().T.tocsc()
    return np.vstack([spla.expm_multiply(QT * t, mu) for t in times])


def total_variation(first: np.ndarray, second: np.ndarray) -> np.ndarray:
    return 0.5 * np.abs(np.asarray(first) - np.asarray(second)).sum(axis=-1)


@dataclass(frozen=True)
class MixingReport:
    times: np.ndarray
    tv: np.ndarray
    delta: float
    t_mix: float
    t_rel: float
    pi_star: float
    starts: List[int]
    lower_ok: bool
    upper_ok: bool


def mixing_time(
    chain: ReversibleChain,
    result: SpectralResult,
    start: int,
    delta: float,
    horizon: Optional[float] = None,
) -> float:
    """First t with ‖P_t(start, ·) - π‖ ≤ δ, by doubling and then bisection."""
    pi = result.pi
    mu = point_mass(chain, start)

    def distance(t: float) -> float:
        return float(total_variation(evolve(chain, result, mu, [t])[0], pi))

    if distance(0.0) <= delta:
        return 0.0
    horizon = horizon or 1e3 * result.t_rel * (1.0 - math.log(pi.min()))
    lo, hi = 0.0, result.t_rel / 16.0
    while distance(hi) > delta:
        lo, hi = hi, 2.0 * hi
        if hi > horizon:
            raise ConvergenceError(
                f"{chain.label}: distance from state {start} stays above {delta} up to t={horizon:.3e}",
                residual=distance(horizon),
            )
    for _ in range(60):
        if hi - lo <= 1e-9 * hi:
            break
        mid = 0.5 * (lo + hi)
        if distance(mid) > delta:
            lo = mid
        else:
            hi = mid
    return hi


def extremal_starts(chain: ReversibleChain, result: SpectralResult) -> List[int]:
    starts = [chain.reference_index, int(np.argmax(np.abs(result.g)))]
    if chain.mirror is not None:
        starts.append(int(chain.mirror[chain.reference_index]))
    return sorted(set(starts))


def tv_and_mixing(
    chain: ReversibleChain,
    result: SpectralResult,
    initial: Union[int, np.ndarray, None] = None,
    delta: float = 1.0 / (2.0 * math.e),
    times: Optional[Sequence[float]] = None,
    horizon: Optional[float] = None,
) -> MixingReport:
    """Exact TV curve from the initial law, T_mix(δ) over extremal starts, and the T_rel sandwich."""
    if not 0 < delta < 1:
        raise InvalidInputError(f"delta must lie in (0, 1), got {delta}")
    if initial is None:
        initial = chain.reference_index
    mu = point_mass(chain, initial) if np.isscalar(initial) else np.asarray(initial, dtype=np.float64)
    if times is None:
        times = np.linspace(0.0, 5.0 * result.t_rel, 51)
    times = np.asarray(times, dtype=np.float64)
    tv = total_variation(evolve(chain, result, mu, times), result.pi)
    starts = extremal_starts(chain, result)
    t_mix = max(mixing_time(chain, result, s, delta, horizon) for s in starts)
    pi_star = float(result.pi.min())
    tol = 1e-9 * result.t_rel
    return MixingReport(
        times=times,
        tv=tv,
        delta=delta,
        t_mix=t_mix,
        t_rel=result.t_rel,
        pi_star=pi_star,
        starts=starts,
        lower_ok=bool(result.t_rel <= t_mix + tol),
        upper_ok=bool(t_mix <= (1.0 - math.log(pi_star)) * result.t_rel + tol),
    )


def extremal_distance(chain: ReversibleChain, result: SpectralResult, times: Sequence[float]) -> np.ndarray:
    """‖ν_t^∧ - ν_t^∨‖ over the grid, for a chain with a mirror map."""
    if chain.mirror is None:
        raise InvalidInputError(f"{chain.label}: extremal distance needs a mirror-symmetric state set")
    top = evolve(chain, result, point_mass(chain, chain.reference_index), times)
    bottom = evolve(chain, result, point_mass(chain, int(chain.mirror[chain.reference_index])), times)
    return total_variation(top, bottom)


@dataclass(frozen=True)
class MixingProfile:
    times: np.ndarray
    distance: np.ndarray
    sup_distance: float
    epsilon: float
    t_mix_start: float
    t_mix_ratio: float


def mixing_profile(
    chain: ReversibleChain,
    result: SpectralResult,
    plus: np.ndarray,
    minus: np.ndarray,
    times: Sequence[float],
    start: Optional[int] = None,
    epsilon: float = 0.05,
) -> MixingProfile:
    """
    Distance of P_t(start, ·) from the two-phase mixture
    (1 + e^{-t/T_rel})/2·π^+ + (1 - e^{-t/T_rel})/2·π^-, and T_mix^start(ε)/(T_rel·log(1/(2ε))).
    """
    start = chain.reference_index if start is None else start
    pi = result.pi
    pi_plus = np.where(plus, pi, 0.0)
    pi_minus = np.where(minus, pi, 0.0)
    if pi_plus.sum() <= 0 or pi_minus.sum() <= 0:
        raise InvalidInputError("both phases need positive equilibrium mass")
    pi_plus /= pi_plus.sum()
    pi_minus /= pi_minus.sum()
    times = np.asarray(times, dtype=np.float64)
    rows = evolve(chain, result, point_mass(chain, start), times)
    decay = np.exp(-times / result.t_rel)[:, None]
    mixture = 0.5 * (1.0 + decay) * pi_plus + 0.5 * (1.0 - decay) * pi_minus
    distance = total_variation(rows, mixture)
    t_mix = mixing_time(chain, result, start, epsilon)
    return MixingProfile(
        times=times,
        distance=distance,
        sup_distance=float(distance.max()) if len(distance) else 0.0,
        epsilon=epsilon,
        t_mix_start=t_mix,
        t_mix_ratio=t_mix / (result.t_rel * math.log(1.0 / (2.0 * epsilon))),
    )


@dataclass(frozen=True, eq=False)
class KilledAnalysis:
    target: np.ndarray
    gamma: float
    g: np.ndarray
    qsd: np.ndarray
    hitting_times: np.ndarray
    pi_target: float
    _killed_vals: Optional[np.ndarray] = field(default=None, repr=False)
    _killed_vecs: Optional[np.ndarray] = field(default=None, repr=False)
    _killed_generator: Optional[sp.csr_matrix] = field(default=None, repr=False)
    _root: Optional[np.ndarray] = field(default=None, repr=False)

    def survival(self, mu: np.ndarray, times: Sequence[float]) -> np.ndarray:
        """P^μ(τ_Γ > t) for each t."""
        alive = ~self.target
        mu_a = np.asarray(mu, dtype=np.float64)[alive]
        times = np.atleast_1d(np.asarray(times, dtype=np.float64))
        if self._killed_vecs is not None:
            coeff = self._killed_vecs.T @ (mu_a / self._root)
            weights = self._killed_vecs.T @ self._root
            return np.exp(-np.outer(times, self._killed_vals)) @ (coeff * weights)
        QT = self._killed_generator.T.tocsc()
        return np.array([spla.expm_multiply(QT * t, mu_a).sum() for t in times])

    def mean_hitting_time(self, index: int) -> float:
        return float(self.hitting_times[index])


def qsd_analysis(
    chain: ReversibleChain,
    target: np.ndarray,
    dense_limit: int = DENSE_AUTO_LIMIT,
) -> KilledAnalysis:
    """Killed process on the complement of Γ: γ_Γ, g_Γ, ν_Γ and E^η[τ_Γ]."""
    target = np.asarray(target, dtype=bool)
    if target.all() or not target.any():
        raise InvalidInputError("Γ must be a non-empty proper subset of the state space")
    alive = ~target
    killed_label = f"{chain.label}-killed"
    n_components, _ = connected_components(chain.rates[alive][:, alive], directed=False)
    if n_components > 1:
        raise DisconnectedError(killed_label, n_components)
    pi = chain.pi
    S = chain.symmetrized()[alive][:, alive].tocsc()
    Q = chain.generator()[alive][:, alive].tocsc()
    root = np.sqrt(pi[alive])
    m = int(alive.sum())
    vals = vecs = None
    if m <= dense_limit:
        vals, vecs = la.eigh(S.toarray())
        gamma, psi = float(vals[0]), vecs[:, 0]
    else:
        ev, evec = spla.eigsh(S, k=1, sigma=-1e-4 * _operator_norm_bound(S), which="LM", tol=1e-12)
        gamma, psi = float(ev[0]), evec[:, 0]
    if psi.sum() < 0:
        psi = -psi
    if np.any(psi <= 0):
        logger.warning(f"{killed_label}: principal vector has {int(np.sum(psi <= 0))} non-positive entries")
    g = np.zeros(chain.n_states)
    g[alive] = psi / root
    qsd = np.zeros(chain.n_states)
    qsd[alive] = psi * root
    qsd /= qsd.sum()
    hitting = np.zeros(chain.n_states)
    hitting[alive] = spla.spsolve(-Q, np.ones(m))
    logger.info(f"{killed_label}: gamma={gamma:.6e}, pi(Gamma)={pi[target].sum():.6e}")
    return KilledAnalysis(
        target=target,
        gamma=gamma,
        g=g,
        qsd=qsd,
        hitting_times=hitting,
        pi_target=float(pi[target].sum()),
        _killed_vals=vals,
        _killed_vecs=vecs,
        _killed_generator=None if vecs is not None else Q.tocsr(),
        _root=root,
    )


@dataclass(frozen=True)
class JerrumReport:
    lam_bar: float
    lam_min: float
    gamma: float
    bound: float
    gap: float

    @property
    def holds(self) -> bool:
        return self.gap >= self.bound * (1.0 - 1e-10)


def projected_chain(chain: ReversibleChain, blocks: np.ndarray) -> ReversibleChain:
    """Chain on blocks with c̄(i, j) = Σ_{x∈X_i} π(x|X_i) Σ_{y∈X_j} c(x, y)."""
    labels, inverse = np.unique(np.asarray(blocks), return_inverse=True)
    k = len(labels)
    P = sp.csr_matrix((np.ones(chain.n_states), (np.arange(chain.n_states), inverse)), shape=(chain.n_states, k))
    pi = chain.pi
    mass = np.asarray(P.T @ pi).ravel()
    flux = (P.T @ sp.diags(pi) @ chain.rates @ P).tolil()
    flux.setdiag(0)
    rates = sp.diags(1.0 / mass) @ flux.tocsr()
    rates.eliminate_zeros()
    return ReversibleChain(
        rates=rates.tocsr(),
        weights=mass,
        label=f"{chain.label}-projected",
        reference_index=int(inverse[chain.reference_index]),
        keys=labels,
        L=chain.L,
        lam=chain.lam,
    )


def jerrum_bound(
    chain: ReversibleChain,
    blocks: np.ndarray,
    result: Optional[SpectralResult] = None,
    dense_limit: int = DENSE_STATE_LIMIT,
) -> JerrumReport:
    """gap ≥ min{λ̄/3, λ̄λ_min/(λ̄ + 3γ)} for the decomposition given by the block labels."""
    blocks = np.asarray(blocks)
    labels = np.unique(blocks)
    if len(labels) < 2:
        raise InvalidInputError("a single block has no projected gap")
    lam_min = math.inf
    gamma = 0.0
    for b in labels:
        mask = blocks == b
        outside = np.asarray(chain.rates[mask][:, ~mask].sum(axis=1)).ravel()
        gamma = max(gamma, float(outside.max()))
        if mask.sum() == 1:
            continue
        block = chain.restrict(mask, label=f"{chain.label}-block-{b}")
        block.check_connected()
        lam_min = min(lam_min, solve_spectrum(block, dense_limit=dense_limit).gap)
    lam_bar = solve_spectrum(projected_chain(chain, blocks), dense_limit=dense_limit).gap
    if math.isinf(lam_min):
        bound = lam_bar / 3.0
    else:
        bound = min(lam_bar / 3.0, lam_bar * lam_min / (lam_bar + 3.0 * gamma))
    gap = result.gap if result is not None else solve_spectrum(chain, dense_limit=dense_limit).gap
    logger.info(f"{chain.label}: Jerrum bound {bound:.6e} vs gap {gap:.6e} over {len(labels)} blocks")
    return JerrumReport(lam_bar=lam_bar, lam_min=lam_min, gamma=gamma, bound=bound, gap=gap)


def _sign_states(L: int, cap: Optional[int]):
    check_capacity("SIGMA_L_MAX", SIGMA_L_MAX, L, "sign-field enumeration")
    keys = np.arange(1 << L, dtype=np.int64)
    shifts = np.arange(L - 1, -1, -1, dtype=np.int64)
    signs = (2 * ((keys[:, None] >> shifts) & 1) - 1).astype(np.int8)
    chi = np.sum(signs[:, 1:] != signs[:, :-1], axis=1)
    if cap is not None:
        keep = chi <= cap
        keys, signs, chi = keys[keep], signs[keep], chi[keep]
    return keys, signs, chi


def _sign_chain(L, lam, keys, signs, weights, rate_fn, label, cap) -> ReversibleChain:
    n = len(keys)
    index = {int(k): i for i, k in enumerate(keys)}
    rows, cols, vals = [], [], []
    for i in range(n):
        for s in range(L):
            target = index.get(int(keys[i]) ^ (1 << (L - 1 - s)))
            if target is None:
                continue
            rate = rate_fn(i, s, target)
            if rate > 0:
                rows.append(i)
                cols.append(target)
                vals.append(rate)
    full = (1 << L) - 1
    mirror = np.array([index[int(k) ^ full] for k in keys], dtype=np.int64)
    chain = _chain_from_triplets(
        n,
        [np.array(rows, dtype=np.int64)],
        [np.array(cols, dtype=np.int64)],
        [np.array(vals, dtype=np.float64)],
        weights,
        label=label,
        reference_index=index[full],
        mirror=mirror,
        keys=keys,
        L=L,
        lam=float(lam),
    )
    chain.check_connected()
    logger.info(f"Built {label} chain: L={L}, lambda={lam}, cap={cap}, {n} states")
    return chain


def projected_sigma_chain(L: int, lam: float, c_o: Optional[float] = None) -> ReversibleChain:
    """
    Sign-field chain with ν(σ) ∝ λ^χ Π segment weights and flip rates
    θ_x(σ) = ½·P(η_{x-1} = η_{x+1} = 0 | Ω_σ), restricted to Ω^o when c_o is given.
    """
    cap = zero_cap(L, c_o)
    tables = segment_tables(L, lam, cap=cap)
    keys, signs, _ = _sign_states(L, cap)
    sign_rows = [tuple(int(v) for v in row) for row in signs]
    weights = np.array([float(sigma_weight(row, tables)) for row in sign_rows])
    sites = list(range(-L + 1, L, 2))

    def rate(i, s, target):
        return 0.5 * float(sigma_flip_probability(sign_rows[i], sites[s], tables))

    label = "sigma-projected" if cap is None else "sigma-projected-omega-o"
    return _sign_chain(L, lam, keys, signs, weights, rate, label, cap)


def sigma_heatbath_chain(L: int, lam: float) -> ReversibleChain:
    """Heat-bath sign dynamics: each sign resampled at rate 1 from ν given the others."""
    tables = segment_tables(L, lam)
    keys, signs, _ = _sign_states(L, None)
    weights = np.array([float(sigma_weight(tuple(int(v) for v in row), tables)) for row in signs])

    def rate(i, s, target):
        return weights[target] / (weights[i] + weights[target])

    return _sign_chain(L, lam, keys, signs, weights, rate, "sigma-heatbath", None)


def sign_chi(chain: ReversibleChain) -> np.ndarray:
    """Crossing count of every state of a sign-field chain."""
    inner = (np.int64(1) << np.int64(chain.L - 1)) - 1
    return np.bitwise_count((chain.keys ^ (chain.keys >> 1)) & inner).astype(np.int64)


def crossing_count_chain(
    L: int,
    lam: float,
    m: Optional[int] = None,
    c_o: Optional[float] = None,
    sigma_chain: Optional[ReversibleChain] = None,
) -> ReversibleChain:
    """Lumped chain on the crossing count over S^+ = {σ_{-L+1} = +}, truncated at m crossings."""
    base = sigma_chain or projected_sigma_chain(L, lam, c_o)
    chi = sign_chi(base)
    m = L - 1 if m is None else m
    if m < 0:
        raise InvalidInputError("m must be >= 0")
    first_plus = (base.keys >> (L - 1)) & 1 == 1
    half = base.restrict(first_plus & (chi <= m), label="sigma-plus-half")
    lumped = projected_chain(half, chi[first_plus & (chi <= m)])
    return ReversibleChain(
        rates=lumped.rates,
        weights=lumped.weights,
        label="crossing-count",
        reference_index=0,
        keys=lumped.keys,
        L=L,
        lam=float(lam),
    )
