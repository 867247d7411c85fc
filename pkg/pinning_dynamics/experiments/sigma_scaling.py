# pinning_dynamics/experiments/sigma_scaling.py

import logging
import math
from functools import partial
from typing import Tuple

from pinning_dynamics.config import ExperimentConfig
from pinning_dynamics.effective import sigma_variational_quotient
from pinning_dynamics.errors import InsufficientDataError
from pinning_dynamics.experiments.common import handle, map_cells
from pinning_dynamics.experiments.scaling import fit_loglog
from pinning_dynamics.reporting import Report
from pinning_dynamics.spectral import projected_sigma_chain, sigma_heatbath_chain, solve_spectrum

logger = logging.getLogger()
logger.setLevel(logging.INFO)

SLOPE_BAND = (-2.9, -2.1)
SCALING_COLUMNS = ["L", "n", "lambda", "gap", "method"]
QUOTIENT_COLUMNS = ["L", "lambda", "backend", "quotient", "scaled", "middle_mass", "n_samples", "relative_error"]


def exact_cell(cell: Tuple[int, float], config: ExperimentConfig) -> dict:
    L, lam = cell
    gap = solve_spectrum(sigma_heatbath_chain(L, lam), dense_limit=config.dense_limit).gap
    projected = math.nan
    if config.params.get("projected", True):
        projected = solve_spectrum(projected_sigma_chain(L, lam), dense_limit=config.dense_limit).gap
    q = sigma_variational_quotient(L, lam, backend="exact")
    return {"L": L, "lam": lam, "gap": gap, "projected": projected, "quotient": q}


def mc_cell(cell: Tuple[int, float], config: ExperimentConfig):
    L, lam = cell
    return sigma_variational_quotient(L, lam, n_mc=config.runs, seed=config.seeds[0] + L, backend="mc")


def _quotient_row(q) -> tuple:
    scaled = q.quotient * q.L ** 2.5 / math.log(q.L)
    return (q.L, q.lam, q.backend, q.quotient, scaled, q.middle_mass, q.n_samples, q.relative_error)


def run(config: ExperimentConfig, report: Report):
    params = config.params
    exact_L = params.get("exact_L", config.L)
    mc_L = params.get("mc_L", [16, 24, 32, 48, 64])
    for lam in config.lam:
        exact = map_cells(partial(exact_cell, config=config), [(L, lam) for L in exact_L], config.jobs)
        rows, quotients = [], []
        for cell in exact:
            L, q = cell["L"], cell["quotient"]
            rows.append((L, None, lam, cell["gap"], "sigma-heatbath-exact"))
            if math.isfinite(cell["projected"]):
                rows.append((L, None, lam, cell["projected"], "sigma-projected-exact"))
            quotients.append(_quotient_row(q))
            report.check(
                f"quotient >= exact sigma gap L={L} lambda={lam}",
                q.quotient >= cell["gap"] * (1.0 - 1e-9),
                q.quotient / cell["gap"],
                (1.0, math.inf),
            )
        report.add_rows("sigma_scaling", SCALING_COLUMNS, rows)

        fit = fit_loglog([c["L"] for c in exact], [c["gap"] for c in exact], SLOPE_BAND)
        report.within(f"sigma gap log-log slope lambda={lam}", fit.slope, SLOPE_BAND, asserted=False)
        report.results[f"sigma_fit_lambda_{lam}"] = fit.to_dict()

        mc = map_cells(partial(mc_cell, config=config), [(L, lam) for L in mc_L], config.jobs)
        quotients.extend(_quotient_row(q) for q in mc)
        report.add_rows("quotients", QUOTIENT_COLUMNS, quotients)
        scaled = [row[4] for row in quotients if row[0] >= 8]
        if scaled:
            spread = max(scaled) / min(scaled)
            bound = float(params.get("bounded_spread", 10.0))
            report.within(f"quotient L^2.5/log L bounded over L <= {max(mc_L + exact_L)} lambda={lam}", spread, (1.0, bound), asserted=False)
        try:
            middle = fit_loglog([row[0] for row in quotients], [row[5] for row in quotients])
            report.within(f"middle band mass slope lambda={lam}", middle.slope, (-0.75, -0.25), asserted=False)
        except InsufficientDataError as e:
            logger.warning(f"lambda={lam}: {e}")

        overlap = params.get("overlap_L")
        if overlap is not None:
            exact_q = sigma_variational_quotient(overlap, lam, backend="exact")
            mc_q = sigma_variational_quotient(overlap, lam, n_mc=config.runs, seed=config.seeds[0], backend="mc")
            err = abs(mc_q.quotient / exact_q.quotient - 1.0)
            report.within(f"MC and exact quotients agree L={overlap} lambda={lam}", err, (0.0, 3.0 * mc_q.relative_error + 0.05), asserted=False)


def handler(event, context=None):
    return handle(event, "sigma-scaling", run)
