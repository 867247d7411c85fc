# pinning_dynamics/experiments/crossing_scaling.py

import logging
from functools import partial
from typing import Tuple

import numpy as np

from pinning_dynamics.config import ExperimentConfig
from pinning_dynamics.effective import particle_equilibration_gap, single_crossing_chain, single_crossing_gap
from pinning_dynamics.equilibrium import excursion_kernel
from pinning_dynamics.experiments.common import handle, map_cells
from pinning_dynamics.experiments.scaling import fit_loglog
from pinning_dynamics.reporting import Report
from pinning_dynamics.spectral import projected_sigma_chain, sign_chi, solve_spectrum

logger = logging.getLogger()
logger.setLevel(logging.INFO)

SLOPE_BAND = (-2.6, -2.4)
SCALING_COLUMNS = ["L", "n", "lambda", "gap", "method"]


def rho0_cell(L: int) -> tuple:
    result = single_crossing_gap(L, "rho0")
    return L, result.gap, result.ramp_bound, result.bound_ok


def rho_cell(cell: Tuple[int, float]) -> tuple:
    """Exact ρ-kind gap next to ρ₀, with the spread of ρ/ρ₀ over E_L."""
    L, lam = cell
    rho = single_crossing_chain(L, "rho", lam)
    rho0 = single_crossing_chain(L, "rho0")
    ratio = rho.weights / rho0.weights
    return L, lam, rho.gap(), rho0.gap(), float(ratio.max() / ratio.min())


def neq_cell(cell: Tuple[int, int, float], config: ExperimentConfig) -> tuple:
    """gap^{+,n} of the sign chain restricted to {first sign +, χ = n} against gap_eq^n."""
    L, n, lam = cell
    chain = projected_sigma_chain(L, lam)
    first_plus = (chain.keys >> (L - 1)) & 1 == 1
    sector = chain.restrict(first_plus & (sign_chi(chain) == n), label=f"sigma-plus-{n}")
    gap_plus = solve_spectrum(sector, dense_limit=config.dense_limit).gap if sector.n_states > 1 else np.nan
    gap_eq = particle_equilibration_gap(n, L, excursion_kernel(2 * L, lam)).gap
    c = gap_plus / (L ** -2.5 * gap_eq)
    return L, n, lam, gap_plus, gap_eq, c


def run(config: ExperimentConfig, report: Report):
    params = config.params
    k_min, k_max = params.get("k_range", [6, 14])
    lengths = [2 ** k for k in range(k_min, k_max + 1)]
    rows = []
    gaps = []
    for L, gap, bound, ok in map_cells(rho0_cell, lengths, config.jobs):
        rows.append((L, 1, None, gap, "rho0-tridiagonal"))
        rows.append((L, 1, None, bound, "rho0-ramp-bound"))
        gaps.append(gap)
        report.check(f"ramp bound >= single-crossing gap L={L}", ok, bound / gap, (1.0, np.inf))
    report.add_rows("crossing_scaling", SCALING_COLUMNS, rows)
    fit = fit_loglog(lengths, gaps, SLOPE_BAND)
    report.within("single-crossing gap log-log slope", fit.slope, SLOPE_BAND)
    report.results["rho0_fit"] = fit.to_dict()

    rho_cells = [(L, lam) for L in params.get("rho_L", [6, 8, 10, 12]) for lam in config.lam]
    for L, lam, gap_rho, gap_rho0, spread in map_cells(rho_cell, rho_cells, config.jobs):
        report.add_rows("rho_vs_rho0", ["L", "lambda", "gap_rho", "gap_rho0", "weight_ratio_spread"], [(L, lam, gap_rho, gap_rho0, spread)])
        report.within(f"rho and rho0 gaps comparable L={L} lambda={lam}", gap_rho / gap_rho0, (0.1, 10.0), asserted=False)

    neq_cells = [
        (L, n, lam)
        for L in params.get("neq_L", [6, 8])
        for n in range(1, int(params.get("neq_n_max", 2)) + 1)
        for lam in config.lam
        if n <= L - 2
    ]
    neq = map_cells(partial(neq_cell, config=config), neq_cells, config.jobs)
    report.add_rows("neq", ["L", "n", "lambda", "gap_plus_n", "gap_eq", "c"], neq)
    for L, n, lam, _, _, c in neq:
        report.check(f"gap^(+,n) over L^-2.5 gap_eq positive L={L} n={n} lambda={lam}", c > 0, c, (0.0, np.inf))
    finite = [row[-1] for row in neq if np.isfinite(row[-1])]
    if finite:
        report.results["neq_c_min"] = min(finite)


def handler(event, context=None):
    return handle(event, "crossing-scaling", run)
