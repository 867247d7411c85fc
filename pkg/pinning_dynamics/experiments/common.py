# pinning_dynamics/experiments/common.py

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Dict, Iterable, List

from pydantic import ValidationError

from pinning_dynamics.config import ExperimentConfig
from pinning_dynamics.errors import (
    CapacityError,
    InvalidInputError,
    OrderViolationError,
    PinningError,
    ScheduleError,
)
from pinning_dynamics.reporting import Report, envelope

logger = logging.getLogger()
logger.setLevel(logging.INFO)


def parse_event(event: Any) -> ExperimentConfig:
    """Accepts a config, a settings dict, a JSON string or an envelope with a JSON body."""
    if isinstance(event, ExperimentConfig):
        return event
    if isinstance(event, str):
        event = json.loads(event)
    if isinstance(event, dict) and isinstance(event.get("body"), str):
        event = json.loads(event["body"])
    return ExperimentConfig.model_validate(event)


def handle(event: Any, name: str, work: Callable[[ExperimentConfig, Report], None]) -> Dict[str, Any]:
    """
    Run one experiment and return its status envelope: 200 when every
    asserted check passes, 417 when one fails, 400 for bad input or a
    capacity bound, 500 otherwise.
    """
    try:
        config = parse_event(event)
        if config.experiment != name:
            raise InvalidInputError(f"handler for {name} received experiment {config.experiment}")
        logger.info(f"Running {name} (config {config.content_hash()[:12]})")
        report = Report(config)
        work(config, report)
        files = report.write()
        failed = [a.name for a in report.assertions if a.kind == "asserted" and not a.passed]
        logger.info(f"{name}: {len(report.assertions)} checks, {len(failed)} failed")
        return envelope(
            report.status_code,
            {
                "experiment": name,
                "passed": report.passed,
                "failed": failed,
                "config_hash": config.content_hash(),
                "files": files,
            },
        )
    except json.JSONDecodeError as e:
        logger.error(f"Invalid JSON for {name}: {e}")
        return envelope(400, {"error": f"Invalid JSON: {e}"})
    except CapacityError as e:
        logger.error(f"Capacity bound hit in {name}: {e}")
        return envelope(400, {"error": str(e), "bound_name": e.bound_name, "bound": e.bound, "requested": e.requested})
    except (ValidationError, InvalidInputError, ScheduleError) as e:
        logger.error(f"Invalid input for {name}: {e}")
        return envelope(400, {"error": str(e)})
    except OrderViolationError as e:
        logger.error(f"Order violation in {name}: {e}")
        return envelope(417, {"error": str(e), "failed": ["order_preserved"]})
    except PinningError as e:
        logger.error(f"Error in {name}: {e}")
        return envelope(500, {"error": str(e)})
    except Exception as e:
        logger.error(f"Unexpected error in {name}: {e}")
        return envelope(500, {"error": f"An internal error occurred: {str(e)}"})


def map_cells(fn: Callable, cells: Iterable, jobs: int = 1) -> List:
    """fn over the grid cells, in a process pool when jobs > 1; results keep grid order."""
    cells = list(cells)
    if jobs <= 1 or len(cells) <= 1:
        return [fn(cell) for cell in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, cells))


def grid(config: ExperimentConfig) -> List[tuple]:
    """(L, λ) cells in config order, L outermost."""
    return [(L, lam) for L in config.L for lam in config.lam]
