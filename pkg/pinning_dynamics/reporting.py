# pinning_dynamics/reporting.py

import csv
import json
import logging
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from pinning_dynamics import __version__
from pinning_dynamics.config import ExperimentConfig

logger = logging.getLogger(__name__)

ASSERTED = "asserted"
REPORTED = "reported"


@dataclass(frozen=True)
class AssertionRecord:
    name: str
    kind: str
    passed: bool
    value: Any = None
    band: Optional[Tuple[float, float]] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "kind": self.kind,
            "passed": bool(self.passed),
            "value": plain(self.value),
            "band": None if self.band is None else [plain(b) for b in self.band],
        }


def plain(value: Any) -> Any:
    """JSON-safe copy: numpy scalars and arrays unwrapped, fractions and non-finite floats as strings."""
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [plain(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


def format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


class Report:
    """
    Tables, summary values and assertion records of one experiment run.
    Only asserted entries decide the status; reported ones log a warning
    when they miss their band.
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.tables: Dict[str, Tuple[List[str], List[Sequence[Any]]]] = {}
        self.results: Dict[str, Any] = {}
        self.assertions: List[AssertionRecord] = []

    def check(self, name: str, passed: bool, value: Any = None, band: Optional[Tuple[float, float]] = None):
        record = AssertionRecord(name, ASSERTED, bool(passed), value, band)
        self.assertions.append(record)
        if not passed:
            logger.error(f"Assertion {name} failed: value={value}, band={band}")
        return record

    def within(self, name: str, value: float, band: Tuple[float, float], asserted: bool = True):
        passed = band[0] <= value <= band[1]
        if asserted:
            return self.check(name, passed, value, band)
        return self.note(name, passed, value, band)

    def note(self, name: str, passed: bool, value: Any = None, band: Optional[Tuple[float, float]] = None):
        record = AssertionRecord(name, REPORTED, bool(passed), value, band)
        self.assertions.append(record)
        if not passed:
            logger.warning(f"Reported check {name} outside its band: value={value}, band={band}")
        return record

    def add_rows(self, table: str, columns: Sequence[str], rows: Sequence[Sequence[Any]]):
        if table in self.tables:
            existing, stored = self.tables[table]
            if list(columns) != existing:
                raise ValueError(f"table {table} already has columns {existing}")
            stored.extend(rows)
        else:
            self.tables[table] = (list(columns), list(rows))

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions if a.kind == ASSERTED)

    @property
    def status_code(self) -> int:
        return 200 if self.passed else 417

    def summary(self) -> Dict[str, Any]:
        return {
            "experiment": self.config.experiment,
            "version": __version__,
            "config_hash": self.config.content_hash(),
            "config": plain(self.config.materialized()),
            "passed": self.passed,
            "assertions": [a.to_dict() for a in self.assertions],
            "results": plain(self.results),
        }

    def write(self, out_dir: Optional[str] = None) -> List[str]:
        """Write the JSON report and one CSV per table; returns the paths written."""
        config = self.config
        out = Path(out_dir or config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stamp = utc_stamp() if config.timestamp else None
        written = []
        if config.format in ("json", "both"):
            path = out / f"{config.experiment}.json"
            payload = self.summary()
            if stamp is not None:
                payload["generated_at"] = stamp
            with open(path, "w", encoding="utf-8") as handle:
                json.dump(payload, handle, sort_keys=True, indent=2, ensure_ascii=False)
                handle.write("\n")
            written.append(str(path))
        if config.format in ("csv", "both"):
            for table, (columns, rows) in sorted(self.tables.items()):
                path = out / f"{config.experiment}_{table}.csv"
                write_csv(path, columns, rows, stamp, config.content_hash())
                written.append(str(path))
        logger.info(f"Wrote {len(written)} report files to {out}")
        return written


def utc_stamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_csv(path: Path, columns: Sequence[str], rows: Sequence[Sequence[Any]], stamp: Optional[str], config_hash: str):
    with open(path, "w", encoding="utf-8", newline="") as handle:
        if stamp is not None:
            handle.write(f"# generated_at={stamp}\n")
        handle.write(f"# config_hash={config_hash} version={__version__}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])


def read_csv(path: Path) -> Tuple[List[str], List[List[str]]]:
    """Columns and rows of a report CSV, comment lines skipped."""
    with open(path, "r", encoding="utf-8") as handle:
        lines = [line for line in handle if not line.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise ValueError(f"{path}: no header row")
    return rows[0], rows[1:]


def envelope(status_code: int, body: Dict[str, Any]) -> Dict[str, Any]:
    return {"statusCode": status_code, "body": json.dumps(plain(body), sort_keys=True)}
