#!/usr/bin/env python
import argparse
import sys
import warnings

from dotenv import load_dotenv

from compdid.core.config import build_bandwidth_config, get_criterion, load_run_config, resolve_settings
from compdid.core.errors import CompDidError
from compdid.services.estimation import run_estimation
from compdid.services.simulation import run_simulation
from compdid.simulation import DgpSpec
from compdid.utils.logger import logger

warnings.filterwarnings("ignore", category=RuntimeWarning, module="numpy")


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML file overlaid on the packaged defaults")
    parser.add_argument("--seed", type=int, help="Master seed (bootstrap draws or Monte Carlo replications)")
    parser.add_argument("--workers", type=int, help="Worker count (default: COMPDID_WORKERS or 1)")
    parser.add_argument("--floor", type=float, help="Propensity score truncation floor in [0, 0.25)")
    parser.add_argument("--orders", type=int, nargs=2, metavar=("P", "Q"), help="Local polynomial orders")
    parser.add_argument("--output", help="Report path stem; writes <stem>.json and/or <stem>.txt")
    parser.add_argument("--format", choices=["json", "text", "both"], help="Report format")
    parser.add_argument("--plot-dir", help="Directory for PNG figures")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="compdid",
        description="Doubly robust DiD estimation of the ATT under compositional changes.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    estimate = subparsers.add_parser("estimate", help="Estimate the ATT on a CSV repeated cross-section")
    _common_flags(estimate)
    estimate.add_argument("--input", help="CSV file with a header row")
    estimate.add_argument("--criterion", choices=["ml", "ls"], help="Cross-validation criterion")
    estimate.add_argument("--draws", type=int, help="Bootstrap draws")
    estimate.add_argument("--no-bootstrap", action="store_true", help="Skip the multiplier bootstrap")

    simulate = subparsers.add_parser("simulate", help="Run the Monte Carlo study")
    _common_flags(simulate)
    simulate.add_argument("--design", type=int, choices=[1, 2], help="1: compositional changes, 2: stationary")
    simulate.add_argument("--reps", type=int, help="Number of replications")
    simulate.add_argument("--n", type=int, help="Sample size per replication")
    simulate.add_argument("--criterion", choices=["ml", "ls"], action="append",
                          help="Cross-validation criterion (repeatable; default both)")
    simulate.add_argument("--full-grid", action="store_true", help="Use the full bandwidth grid per replication")
    return parser


def _drop_none(values: dict) -> dict:
    out = {}
    for key, value in values.items():
        if isinstance(value, dict):
            value = _drop_none(value)
            if not value:
                continue
        if value is not None:
            out[key] = value
    return out


def _estimate_overrides(args: argparse.Namespace) -> dict:
    overrides = {
        "input": args.input,
        "output": args.output,
        "format": args.format,
        "plot_dir": args.plot_dir,
        "workers": args.workers,
        "floor": args.floor,
        "bandwidth": {"criterion": args.criterion},
        "bootstrap": {"seed": args.seed, "draws": args.draws},
    }
    if args.orders:
        overrides["p_order"], overrides["q_order"] = args.orders
    overrides = _drop_none(overrides)
    if args.no_bootstrap:
        overrides["bootstrap"] = None
    return overrides


def estimate(args: argparse.Namespace) -> None:
    config = load_run_config(args.config, _estimate_overrides(args))
    run_estimation(config)


def simulate(args: argparse.Namespace) -> None:
    settings = resolve_settings(args.config, _drop_none({"workers": args.workers, "floor": args.floor}))
    sim = settings.get("simulation", {})
    orders = tuple(args.orders) if args.orders else (settings.get("p_order", 1), settings.get("q_order", 1))
    criteria = args.criterion or sim.get("criteria", ["ml", "ls"])
    bandwidth = build_bandwidth_config(settings, coarse=not args.full_grid)
    spec = DgpSpec(
        design=args.design or sim.get("design", 1),
        n=args.n or sim.get("n", 1000),
        seed=args.seed if args.seed is not None else sim.get("seed", 0),
    )
    run_simulation(
        spec,
        replications=args.reps or sim.get("replications", 200),
        criteria=tuple(dict.fromkeys(get_criterion(c) for c in criteria)),
        bandwidth=bandwidth,
        floor=settings.get("floor", 0.01),
        orders=orders,
        workers=settings.get("workers", 1),
        output=args.output,
        fmt=args.format or settings.get("format", "both"),
        plot_dir=args.plot_dir,
    )


def main(argv: list[str] | None = None) -> int:
    """
    Run the CLI and return the process exit code.
    """
    load_dotenv()
    args = build_parser().parse_args(argv)
    logger.info(f"Starting compdid {args.command}.")
    try:
        if args.command == "estimate":
            estimate(args)
        else:
            simulate(args)
    except CompDidError as e:
        logger.error(f"compdid {args.command} failed: {e}", exc_info=True)
        print(str(e), file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.error(f"An unexpected error occurred while running compdid {args.command}: {e}", exc_info=True)
        print(f"unexpected error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
