#!/usr/bin/env python3
# app.py

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from pinning_dynamics import __version__
from pinning_dynamics.config import EXPERIMENT_NAMES, blob_hash, build_config, load_experiments
from pinning_dynamics.effective import particle_equilibration_gap, single_crossing_gap
from pinning_dynamics.equilibrium import excursion_kernel, path_weights
from pinning_dynamics.errors import CapacityError, InvalidInputError, PinningError, ScheduleError
from pinning_dynamics.experiments.runner import body_of, run_experiment, status_of
from pinning_dynamics.experiments.scaling import scaling_report
from pinning_dynamics.mc_sim import (
    OBSERVABLE_NAMES,
    DynamicsSpec,
    censored_run,
    parse_schedule,
    simulate_heatbath,
    three_phase_schedule,
)
from pinning_dynamics.polymer_core import PathConfig, maximal_path, path_space, sign_keys, zero_crossing_arrays
from pinning_dynamics.reporting import plain, utc_stamp, write_csv
from pinning_dynamics.spectral import (
    build_generator,
    crossing_count_chain,
    projected_sigma_chain,
    sigma_heatbath_chain,
    solve_spectrum,
)

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = Path(__file__).resolve().parent / "experiments.json"
EXIT_CODES = {200: 0, 417: 1, 500: 1, 400: 2}
USAGE_ERRORS = (InvalidInputError, CapacityError, ScheduleError, ValueError, KeyError)

# Subcommands that are thin aliases for a named experiment.
EXPERIMENT_COMMANDS = {
    "identities": "identities",
    "qsd": "qsd",
    "tunnel": "metastability-mc",
    "couplings": "particle-couplings",
}


def _overrides(args) -> Dict[str, Any]:
    overrides = {
        "L": args.L,
        "lambda": args.lam,
        "seeds": args.seed,
        "runs": args.runs,
        "horizon": args.horizon,
        "jobs": args.jobs,
        "out_dir": args.out,
        "format": args.format,
    }
    if args.no_timestamp:
        overrides["timestamp"] = False
    return overrides


def _run_named(name: str, args, params: Optional[Dict[str, Any]] = None) -> int:
    experiments = load_experiments(Path(args.config))
    settings = dict(experiments.get(name, {}))
    if params:
        settings["params"] = {**settings.get("params", {}), **params}
    config = build_config(name, settings, _overrides(args))
    response = run_experiment(config)
    status = status_of(response)
    print(json.dumps(body_of(response), indent=2, sort_keys=True))
    return EXIT_CODES.get(status, 1)


def cmd_run(args) -> int:
    return _run_named(args.experiment, args)


def cmd_experiment(args) -> int:
    params = {"target": args.target} if getattr(args, "target", None) else None
    return _run_named(EXPERIMENT_COMMANDS[args.command], args, params)


def _single(values: Optional[List], default, name: str):
    if values is None:
        return default
    if len(values) != 1:
        raise InvalidInputError(f"{name} takes a single value for this subcommand")
    return values[0]


def cmd_enumerate(args) -> int:
    """Every path of the free state space with its weight, zero count, crossing count and sign key."""
    L = _single(args.L, 4, "--L")
    lam = _single(args.lam, 0.5, "--lambda")
    space = path_space(L)
    weights = path_weights(L, lam)
    pi = weights / weights.sum()
    _, _, n_zeros, chi, _ = zero_crossing_arrays(space.heights)
    keys = sign_keys(space.heights)
    rows = [(space.path(i).to_string(), pi[i], n_zeros[i], chi[i], keys[i]) for i in range(len(space))]
    columns = ["path", "pi", "zeros", "crossings", "sign_key"]
    out = Path(args.out or "results")
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"enumerate_L{L}.csv"
    stamp = None if args.no_timestamp else utc_stamp()
    write_csv(path, columns, rows, stamp, blob_hash({"command": "enumerate", "L": L, "lambda": lam}))
    logger.info(f"Wrote {len(rows)} paths to {path}")
    print(path)
    return 0


def cmd_gap(args) -> int:
    """Spectral gap of one chain, printed as JSON."""
    L = _single(args.L, 4, "--L")
    lam = _single(args.lam, 0.5, "--lambda")
    summary: Dict[str, Any] = {"chain": args.chain, "L": L, "lambda": lam, "version": __version__}
    if args.chain == "single-crossing":
        result = single_crossing_gap(L, args.kind, lam)
        summary.update(gap=result.gap, ramp_bound=result.ramp_bound)
    elif args.chain == "particle":
        result = particle_equilibration_gap(args.n, L, excursion_kernel(2 * L, lam))
        summary.update(n=args.n, gap=result.gap, n_states=result.n_states)
    else:
        builders = {
            "path": lambda: build_generator(L, lam),
            "sigma": lambda: sigma_heatbath_chain(L, lam),
            "sigma-projected": lambda: projected_sigma_chain(L, lam),
            "crossing-count": lambda: crossing_count_chain(L, lam),
        }
        chain = builders[args.chain]()
        result = solve_spectrum(chain, mode=args.mode)
        summary.update(gap=result.gap, t_rel=result.t_rel, n_states=chain.n_states, mode=result.mode)
    print(json.dumps(plain(summary), indent=2, sort_keys=True))
    return 0


def _schedule(text: str, L: int):
    if text == "three-phase":
        return three_phase_schedule(L)
    with open(text, "r", encoding="utf-8") as handle:
        return parse_schedule(json.load(handle))


def cmd_simulate(args) -> int:
    """One trajectory: an event CSV (t, event_site) and a sample CSV of the observables."""
    L = _single(args.L, 8, "--L")
    lam = _single(args.lam, 0.5, "--lambda")
    seed = _single(args.seed, 0, "--seed")
    spec = DynamicsSpec(L, lam, engine=args.engine)
    start = PathConfig.from_string(args.start) if args.start else maximal_path(L)
    observables = args.observables or ["height_sum"]
    if args.schedule:
        schedule = _schedule(args.schedule, L)
        horizon = schedule.horizon
        times = np.linspace(0.0, horizon, args.samples + 1)
        record = censored_run(spec, schedule, start, seed, observables, times, record_events=True)
    else:
        horizon = args.horizon or float(L * L)
        times = np.linspace(0.0, horizon, args.samples + 1)
        record = simulate_heatbath(spec, start, horizon, seed, observables, times, record_events=True)
    out = Path(args.out or "results")
    out.mkdir(parents=True, exist_ok=True)
    stamp = None if args.no_timestamp else utc_stamp()
    key = blob_hash({"command": "simulate", "L": L, "lambda": lam, "seed": seed, "horizon": horizon, "engine": args.engine, "schedule": args.schedule})
    events = out / f"trajectory_L{L}_seed{seed}.csv"
    write_csv(events, ["t", "event_site"], list(zip(record.event_times, record.event_sites)), stamp, key)
    samples = out / f"trajectory_L{L}_seed{seed}_samples.csv"
    columns = ["t"] + list(observables)
    rows = [(t, *(record.samples[name][i] for name in observables)) for i, t in enumerate(record.sample_times)]
    write_csv(samples, columns, rows, stamp, key)
    summary = {
        "seed": seed,
        "engine": record.engine,
        "events": record.events,
        "flips": record.flips,
        "final": record.final.to_string(),
        "files": [str(events), str(samples)],
    }
    print(json.dumps(plain(summary), indent=2, sort_keys=True))
    return 0


def cmd_scaling(args) -> int:
    where = dict(item.split("=", 1) for item in args.where or [])
    fit = scaling_report(args.files, tuple(args.band) if args.band else None, args.x, args.y, where or None)
    print(json.dumps(plain(fit.to_dict()), indent=2, sort_keys=True))
    return 0 if fit.passed is not False else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=str(DEFAULT_CONFIG), help="experiment file (JSON)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, nargs="+")
    common.add_argument("--jobs", type=int)
    common.add_argument("--format", choices=["csv", "json", "both"])
    common.add_argument("--verbose", action="store_true")
    common.add_argument("--no-timestamp", action="store_true", help="omit the generated_at line")
    common.add_argument("--L", type=int, nargs="+")
    common.add_argument("--lambda", dest="lam", type=float, nargs="+")
    common.add_argument("--runs", type=int)
    common.add_argument("--horizon", type=float)

    parser = argparse.ArgumentParser(prog="pinning-dynamics", description="Pinned polymer dynamics experiments")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("enumerate", parents=[common], help="list every path with its weight").set_defaults(func=cmd_enumerate)
    for name in ("identities", "qsd", "couplings"):
        sub.add_parser(name, parents=[common], help=f"run the {EXPERIMENT_COMMANDS[name]} experiment").set_defaults(func=cmd_experiment)
    tunnel = sub.add_parser("tunnel", parents=[common], help="run the metastability-mc experiment")
    tunnel.add_argument("--target", choices=["omega-minus", "s0-minus"])
    tunnel.set_defaults(func=cmd_experiment)

    gap = sub.add_parser("gap", parents=[common], help="spectral gap of one chain")
    gap.add_argument("--chain", default="path", choices=["path", "sigma", "sigma-projected", "crossing-count", "single-crossing", "particle"])
    gap.add_argument("--mode", default="auto", choices=["auto", "dense", "sparse"])
    gap.add_argument("--kind", default="rho0", choices=["rho0", "rho"])
    gap.add_argument("--n", type=int, default=2)
    gap.set_defaults(func=cmd_gap)

    simulate = sub.add_parser("simulate", parents=[common], help="one heat-bath trajectory")
    simulate.add_argument("--engine", default="naive", choices=["naive", "active-set"])
    simulate.add_argument("--start", help="initial path as a +/- step string")
    simulate.add_argument("--observables", nargs="+", choices=OBSERVABLE_NAMES)
    simulate.add_argument("--samples", type=int, default=100)
    simulate.add_argument("--schedule", help="three-phase or a JSON file of {start, end, sites} windows")
    simulate.set_defaults(func=cmd_simulate)

    scaling = sub.add_parser("scaling", parents=[common], help="log-log slope over result CSVs")
    scaling.add_argument("files", nargs="+")
    scaling.add_argument("--band", type=float, nargs=2)
    scaling.add_argument("--x", default="L")
    scaling.add_argument("--y", default="gap")
    scaling.add_argument("--where", nargs="*", help="column=value filters")
    scaling.set_defaults(func=cmd_scaling)

    run = sub.add_parser("run", parents=[common], help="run any named experiment from the experiment file")
    run.add_argument("--experiment", required=True, choices=EXPERIMENT_NAMES)
    run.set_defaults(func=cmd_run)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except USAGE_ERRORS as e:
        logger.error(f"{args.command}: {e}")
        return 2
    except PinningError as e:
        logger.error(f"{args.command}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
