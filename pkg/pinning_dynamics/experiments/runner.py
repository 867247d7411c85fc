# pinning_dynamics/experiments/runner.py

import json
import logging
from typing import Any, Callable, Dict

from pinning_dynamics.config import ExperimentConfig
from pinning_dynamics.experiments import (
    censoring,
    crossing_scaling,
    identities,
    metastability_mc,
    particle_couplings,
    qsd,
    sigma_scaling,
    spectra_small_l,
)
from pinning_dynamics.experiments.common import parse_event
from pinning_dynamics.reporting import envelope

logger = logging.getLogger()
logger.setLevel(logging.INFO)

HANDLERS: Dict[str, Callable[..., Dict[str, Any]]] = {
    "identities": identities.handler,
    "spectra-small-L": spectra_small_l.handler,
    "qsd": qsd.handler,
    "metastability-mc": metastability_mc.handler,
    "sigma-scaling": sigma_scaling.handler,
    "crossing-scaling": crossing_scaling.handler,
    "particle-couplings": particle_couplings.handler,
    "censoring": censoring.handler,
}


def run_experiment(config: ExperimentConfig) -> Dict[str, Any]:
    """Route a validated config to its experiment handler and return the status envelope."""
    handler = HANDLERS.get(config.experiment)
    if handler is None:
        return envelope(400, {"error": f"Unknown experiment: {config.experiment}"})
    return handler(config)


def handler(event, context=None):
    """
    Routes an event to the experiment it names
    """
    try:
        config = parse_event(event)
    except Exception as e:
        logger.error(f"Could not parse experiment event: {e}")
        return envelope(400, {"error": f"Invalid experiment event: {e}"})
    logger.info(f"Routing to {config.experiment}")
    return run_experiment(config)


def status_of(response: Dict[str, Any]) -> int:
    return int(response.get("statusCode", 500))


def body_of(response: Dict[str, Any]) -> Dict[str, Any]:
    return json.loads(response.get("body") or "{}")
