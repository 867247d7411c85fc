# pinning_dynamics/experiments/identities.py

import logging
from fractions import Fraction
from functools import partial
from typing import List, Tuple

import numpy as np

from pinning_dynamics.config import ExperimentConfig, zero_cap
from pinning_dynamics.equilibrium import (
    enumeration_probability,
    excursion_kernel,
    nu_n_marginals,
    partition_functions,
    pi_marginals,
    reflection_defect,
    segment_tables,
    sigma_weight,
    tail_fit,
    wall_weights,
)
from pinning_dynamics.experiments.common import handle, map_cells
from pinning_dynamics.polymer_core import classify_heights, sign_keys, zero_crossing_arrays
from pinning_dynamics.reporting import Report
from pinning_dynamics.spectral import crossing_count_chain

logger = logging.getLogger()
logger.setLevel(logging.INFO)

TAIL_BAND = (-1.55, -1.45)
ORACLE_COLUMNS = ["quantity", "L", "lambda", "closed_form", "enumerated", "match"]


def _chi(heights: np.ndarray) -> np.ndarray:
    return zero_crossing_arrays(heights)[3]


def _ith_crossing_at(heights: np.ndarray, n: int, i: int, x: int) -> np.ndarray:
    _, cross, _, chi, _ = zero_crossing_arrays(heights)
    L = (heights.shape[1] - 1) // 2
    column = x + L - 1
    return (chi == n) & cross[:, column] & (np.cumsum(cross, axis=1)[:, column] == i)


def oracle_rows(cell: Tuple[int, float]) -> List[tuple]:
    """Every closed-form probability at (L, λ) next to its value from full enumeration."""
    L, lam = cell
    rows = []

    def add(name, closed, enumerated):
        rows.append((name, L, lam, str(closed), str(enumerated), closed == enumerated))

    marginals = pi_marginals(L, lam, exact=True)
    for x, value in marginals.zero_prob.items():
        add(f"zero[{x}]", value, enumeration_probability(L, lam, lambda h, x=x: h[:, x + L] == 0, exact=True))
    for n, value in enumerate(marginals.crossing_law):
        add(f"chi={n}", value, enumeration_probability(L, lam, lambda h, n=n: _chi(h) == n, exact=True))
    for k, value in enumerate(marginals.zeros_tail):
        add(f"N>{k}", value, enumeration_probability(L, lam, lambda h, k=k: zero_crossing_arrays(h)[2] > k, exact=True))
    ell = marginals.ell
    add(
        "omega_plus",
        marginals.omega_plus,
        enumeration_probability(L, lam, lambda h: classify_heights(h, ell, None)[0], exact=True),
    )

    tables = segment_tables(L, lam, exact=True)
    keys = range(1 << L)
    signs = [tuple(1 if (key >> (L - 1 - s)) & 1 else -1 for s in range(L)) for key in keys]
    weights = [sigma_weight(row, tables) for row in signs]
    total = sum(weights, Fraction(0))
    for key, weight in zip(keys, weights):
        add(f"nu[{key}]", weight / total, enumeration_probability(L, lam, lambda h, k=key: sign_keys(h) == k, exact=True))

    for n in range(1, min(2, L - 1) + 1):
        law = nu_n_marginals(n, L, lam, exact=True)
        p_n = enumeration_probability(L, lam, lambda h, n=n: _chi(h) == n, exact=True)
        for i in range(1, n + 1):
            for s, x in enumerate(law.sites):
                joint = enumeration_probability(
                    L, lam, lambda h, n=n, i=i, x=int(x): _ith_crossing_at(h, n, i, x), exact=True
                )
                add(f"nu_{n}[xi_{i}={int(x)}]", law.marginals[i - 1, s], joint / p_n)
    return rows


def mu_rows(cell: Tuple[int, float]) -> List[tuple]:
    """Stationary law of the crossing-count chain against enumeration, in floating point."""
    L, lam = cell
    chain = crossing_count_chain(L, lam)
    rows = []
    for k, n in enumerate(chain.keys):
        enumerated = enumeration_probability(L, lam, lambda h, n=int(n): _chi(h) == n)
        rows.append((f"mu[{int(n)}]", L, lam, float(chain.pi[k]), enumerated))
    return rows


def tail_row(lam: float, j_min: int, j_max: int) -> tuple:
    fit = tail_fit(excursion_kernel(j_max, lam), j_min, j_max)
    return lam, j_min, j_max, fit.exponent, fit.r_squared


def run(config: ExperimentConfig, report: Report):
    params = config.params
    max_len = 2 * max(config.L)
    tol = config.tolerances

    for lam in config.lam:
        defect = float(reflection_defect(max_len, lam))
        report.add_rows("reflection", ["lambda", "max_len", "defect"], [(lam, max_len, defect)])
        report.check(f"reflection lambda={lam}", defect < tol.reflection, defect, (0.0, tol.reflection))

        cap = zero_cap(max(config.L), config.c_o_for(lam))
        table = partition_functions(max(config.L), lam, zero_cap=cap)
        report.add_rows(
            "partition",
            ["lambda", "j", "w_free", "w_wall", "w_wall_capped"],
            [(lam, j, float(f), float(w), None if c is None else float(c)) for j, f, w, c in table.rows()],
        )

    j_min, j_max = params.get("tail_window", [200, 2000])
    tails = map_cells(partial(tail_row, j_min=j_min, j_max=j_max), config.lam, config.jobs)
    report.add_rows("tail", ["lambda", "j_min", "j_max", "exponent", "r_squared"], tails)
    for lam, _, _, exponent, _ in tails:
        report.within(f"tail exponent lambda={lam}", exponent, TAIL_BAND)

    known = wall_weights(6, Fraction(1, 2), exact=True)
    report.check("w_wall[4] at lambda=1/2 is 3/32", known[4] == Fraction(3, 32), str(known[4]))
    report.check("w_wall[6] at lambda=1/2 is 13/256", known[6] == Fraction(13, 256), str(known[6]))

    cells = [(L, lam) for L in params.get("oracle_L", [2, 3, 4, 5, 6]) for lam in params.get("oracle_lambda", [0.5, 1.0, 1.5])]
    mismatches = 0
    for rows in map_cells(oracle_rows, cells, config.jobs):
        report.add_rows("oracle", ORACLE_COLUMNS, rows)
        mismatches += sum(1 for row in rows if not row[-1])
    report.check("closed forms match enumeration exactly", mismatches == 0, mismatches)

    worst = 0.0
    for rows in map_cells(mu_rows, cells, config.jobs):
        report.add_rows("crossing_count", ["quantity", "L", "lambda", "chain", "enumerated"], rows)
        worst = max([worst] + [abs(a - b) for *_, a, b in rows])
    report.check("crossing-count law matches enumeration", worst < 1e-12, worst, (0.0, 1e-12))
    report.results["oracle_cells"] = len(cells)


def handler(event, context=None):
    return handle(event, "identities", run)
