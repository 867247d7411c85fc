# pinning_dynamics/experiments/scaling.py

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from pinning_dynamics.errors import InsufficientDataError, InvalidInputError
from pinning_dynamics.reporting import read_csv

logger = logging.getLogger(__name__)

MIN_POINTS = 5


@dataclass(frozen=True)
class ScalingFit:
    """Least-squares line through (log x, log y)."""

    slope: float
    intercept: float
    r_squared: float
    n_points: int
    band: Optional[Tuple[float, float]] = None

    @property
    def passed(self) -> Optional[bool]:
        if self.band is None:
            return None
        return self.band[0] <= self.slope <= self.band[1]

    @property
    def message(self) -> str:
        text = f"slope {self.slope:.4f} (R²={self.r_squared:.4f}, {self.n_points} points)"
        if self.band is None:
            return text
        verdict = "inside" if self.passed else "outside"
        return f"{text} {verdict} [{self.band[0]}, {self.band[1]}]"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "n_points": self.n_points,
            "band": None if self.band is None else list(self.band),
            "passed": self.passed,
            "message": self.message,
        }


def fit_loglog(xs: Sequence[float], ys: Sequence[float], band: Optional[Tuple[float, float]] = None) -> ScalingFit:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if len(xs) != len(ys):
        raise InvalidInputError(f"{len(xs)} x values against {len(ys)} y values")
    if len(xs) < MIN_POINTS:
        raise InsufficientDataError(f"a scaling fit needs at least {MIN_POINTS} points, got {len(xs)}")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise InvalidInputError("log-log fit needs positive values")
    if len(np.unique(xs)) < 2:
        raise InsufficientDataError("all x values coincide")
    log_y = np.log(ys)
    if np.ptp(log_y) == 0.0:
        # linregress divides by the y spread for r
        fit = ScalingFit(0.0, float(log_y[0]), 1.0, len(xs), band)
    else:
        result = stats.linregress(np.log(xs), log_y)
        fit = ScalingFit(float(result.slope), float(result.intercept), float(result.rvalue ** 2), len(xs), band)
    logger.info(f"Scaling fit: {fit.message}")
    return fit


def load_points(
    paths: Iterable[Path],
    x_column: str = "L",
    y_column: str = "gap",
    where: Optional[Dict[str, str]] = None,
) -> Tuple[List[float], List[float]]:
    """(x, y) pairs from report CSVs, keeping rows whose columns match `where`."""
    xs: List[float] = []
    ys: List[float] = []
    for path in paths:
        columns, rows = read_csv(Path(path))
        missing = [c for c in [x_column, y_column, *(where or {})] if c not in columns]
        if missing:
            raise InvalidInputError(f"{path}: missing columns {missing}")
        at = {name: columns.index(name) for name in columns}
        for row in rows:
            if where and any(row[at[k]] != v for k, v in where.items()):
                continue
            if not row[at[y_column]] or not row[at[x_column]]:
                continue
            y = float(row[at[y_column]])
            if math.isfinite(y):
                xs.append(float(row[at[x_column]]))
                ys.append(y)
    return xs, ys


def scaling_report(
    paths: Iterable[Path],
    band: Optional[Tuple[float, float]] = None,
    x_column: str = "L",
    y_column: str = "gap",
    where: Optional[Dict[str, str]] = None,
) -> ScalingFit:
    """Log-log regression over the points of one or more result files, checked against a slope band."""
    xs, ys = load_points(paths, x_column, y_column, where)
    return fit_loglog(xs, ys, band)
