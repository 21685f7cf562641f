"""
Command-line interface.

Every subcommand reads an optional YAML configuration (``--config``), applies the
``--seed`` and ``--workers`` overrides and writes its result into ``--out`` when given,
otherwise to standard output.

Examples:
    Shell::

        quantrbp design --config design.yaml --out results/
        quantrbp se --config experiment.yaml
        quantrbp experiment --config experiment.yaml --workers 4 -v
        quantrbp sweep --out sweep/
"""
import argparse
import dataclasses
import io
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Type, TypeVar

import quantrbp
import quantrbp.config
import quantrbp.designer
import quantrbp.errors
import quantrbp.harness

__all__ = ["main", "build_parser"]

logger = logging.getLogger(__name__)

T = TypeVar("T")

_LOG_LEVELS = (logging.WARNING, logging.INFO, logging.DEBUG)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quantrbp",
        description="Relaxed belief propagation for quantized compressed sensing.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {quantrbp.__version__}"
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--seed", type=int, help="master seed, overrides the file")
    common.add_argument(
        "--workers", type=int, help="number of worker threads, overrides the file"
    )
    common.add_argument("--out", help="output directory, standard output if omitted")
    common.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="log progress (-v) or everything (-vv) to standard error",
    )

    subparsers = parser.add_subparsers(dest="command", required=True)
    subparsers.add_parser(
        "design",
        parents=[common],
        help="design SE-optimal quantizers over a grid of measurement ratios",
    )
    subparsers.add_parser(
        "se", parents=[common], help="state-evolution trace of an experiment, as CSV"
    )
    subparsers.add_parser(
        "reconstruct",
        parents=[common],
        help="a single trial of an experiment, as a JSON report",
    )
    subparsers.add_parser(
        "experiment", parents=[common], help="all trials of an experiment"
    )
    subparsers.add_parser(
        "sweep",
        parents=[common],
        help="predicted and simulated MSE over rates, as CSV plus a plot script",
    )
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run the command line ``argv`` and return the exit status."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=_LOG_LEVELS[min(args.verbose, len(_LOG_LEVELS) - 1)],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        _COMMANDS[args.command](args)
    except quantrbp.errors.QuantRbpError as e:
        _report_error(e.__class__.__name__, str(e), e.diagnostics)
        return 1
    except OSError as e:
        _report_error(e.__class__.__name__, str(e), {"filename": e.filename})
        return 1
    return 0


def _report_error(name: str, message: str, diagnostics: Dict[str, Any]) -> None:
    error = {"error": name, "message": message, "diagnostics": diagnostics}
    sys.stderr.write(json.dumps(error, sort_keys=True, default=str) + "\n")


def _load(cls: Type[T], args: argparse.Namespace) -> T:
    if args.config is None:
        config = quantrbp.config.from_dict(cls, {})
    else:
        config = quantrbp.config.load(cls, args.config)
    overrides: Dict[str, int] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    # Re-runs the validation of the dataclass.
    return dataclasses.replace(config, **overrides) if overrides else config


def _emit(args: argparse.Namespace, name: str, text: str) -> None:
    if args.out is None:
        sys.stdout.write(text)
        return
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, name)
    with open(path, "w", newline="") as f:
        f.write(text)
    logger.info("Wrote %s", path)


def _design(args: argparse.Namespace) -> None:
    config = _load(quantrbp.config.DesignConfig, args)
    result = quantrbp.designer.sweep_beta(config.problem(), workers=config.workers)
    document = {
        "schema_version": quantrbp.harness.SCHEMA_VERSION,
        "code_version": quantrbp.__version__,
        "config": config.to_dict(),
        **result.to_dict(),
    }
    _emit(args, "design.json", json.dumps(document, sort_keys=True, indent=2) + "\n")
    if args.out is not None:
        result.write_boundaries_csv(os.path.join(args.out, "boundaries.csv"))
        result.quantizer.save(os.path.join(args.out, "quantizer.json"))


def _se(args: argparse.Namespace) -> None:
    config = _load(quantrbp.config.ExperimentConfig, args)
    _, se_trace = quantrbp.harness.prepare(dataclasses.replace(config, method="rbp"))
    assert se_trace is not None
    buffer = io.StringIO()
    se_trace.write_csv(buffer)
    _emit(args, "se_trace.csv", buffer.getvalue())


def _reconstruct(args: argparse.Namespace) -> None:
    config = _load(quantrbp.config.ExperimentConfig, args)
    report = quantrbp.harness.run_experiment(dataclasses.replace(config, trials=1))
    _emit(args, "reconstruct.json", report.to_json())


def _experiment(args: argparse.Namespace) -> None:
    config = _load(quantrbp.config.ExperimentConfig, args)
    report = quantrbp.harness.run_experiment(config)
    _emit(args, "experiment.json", report.to_json())


def _sweep(args: argparse.Namespace) -> None:
    config = _load(quantrbp.config.SweepConfig, args)
    result = quantrbp.harness.emit_rate_sweep(
        config, "sweep" if args.out is None else args.out
    )
    sys.stdout.write(
        f"Wrote {len(result.rows)} rows to {result.csv_path} "
        f"and the plot script {result.plot_script_path}\n"
    )


_COMMANDS = {
    "design": _design,
    "se": _se,
    "reconstruct": _reconstruct,
    "experiment": _experiment,
    "sweep": _sweep,
}
