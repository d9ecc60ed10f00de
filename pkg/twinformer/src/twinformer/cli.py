"""
Command-line entry point: `twinformer {train,evaluate,predict,bench,gradcheck}`.

Exit codes: 0 success, 1 configuration or usage error, 2 data error,
3 numerical failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from . import __version__
from .config import RunConfig, default_log_level, load_run_config
from .errors import ConfigError, GradientAuditError, TwinFormerError
from .runner import (
    LOG_FORMAT,
    run_benchmark,
    run_evaluation,
    run_gradcheck,
    run_prediction,
    run_training,
)

logger = logging.getLogger(__name__)


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        raise ConfigError(f"{self.prog}: {message}")


def configure_logging(level: str) -> None:
    numeric = getattr(logging, str(level).upper(), None)
    if not isinstance(numeric, int):
        raise ConfigError(f"unknown log level {level!r}")
    logging.basicConfig(level=numeric, format=LOG_FORMAT, handlers=[logging.StreamHandler(sys.stderr)])
    logging.getLogger().setLevel(numeric)


def _load(args: argparse.Namespace, out_is_base: bool = True) -> RunConfig:
    overrides: Dict[str, Any] = {"seed": args.seed}
    if out_is_base:
        overrides["output_dir"] = args.out
    return load_run_config(args.config, overrides)


def cmd_train(args: argparse.Namespace) -> int:
    run = run_training(_load(args), plot=args.plot)
    report = run.report
    test = report.test
    print(f"run directory: {run.run_dir}")
    print(f"stopped at epoch {report.stopped_epoch} ({report.stop_reason}); best epoch {report.best_epoch}")
    print(f"test MAE={test.mae:.6g} RMSE={test.rmse:.6g} R2={'n/a' if test.r2 is None else f'{test.r2:.6g}'}")
    if report.skill_ratio is not None:
        print(f"skill ratio vs persistence: {report.skill_ratio:.4f}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    path = run_evaluation(_load(args, out_is_base=False), args.checkpoint, args.split, args.out)
    print(path.read_text())
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    path = run_prediction(_load(args, out_is_base=False), args.checkpoint, args.input, args.out, plot=args.plot)
    print(f"forecast written to {path}")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    outcome = run_benchmark(_load(args), repeats=args.repeats, warmup=args.warmup, dense=args.dense)
    result = outcome["result"]
    for row in result.rows:
        line = f"L={row.seq_len:<6d} N_p={row.n_patches:<4d} median={row.median_seconds:.6f}s"
        if row.dense_median_seconds is not None:
            line += f" dense={row.dense_median_seconds:.6f}s"
        print(line)
    for ratio in result.ratios:
        print(f"t(2L)/t(L) = {ratio:.3f}")
    print(f"bench written to {outcome['path']}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    outcome = run_gradcheck(_load(args), samples=args.samples)
    report = outcome["report"]
    print(f"max relative error {report.max_relative_error:.3e} (tolerance {report.tolerance:.0e})")
    print(f"report written to {outcome['path']}")
    if not report.passed:
        names = ", ".join(check.name for check in report.failures())
        raise GradientAuditError(f"gradient audit failed for: {names}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="twinformer", description="Hierarchical sparse-attention time-series forecaster")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    common = _ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, required=True, help="YAML run config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")

    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", parents=[common], help="fit a model and write a run directory")
    train.add_argument("--plot", action="store_true", help="also write loss_curve.png")
    train.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser("evaluate", parents=[common], help="score a checkpoint on one split")
    evaluate.add_argument("--checkpoint", type=Path, required=True)
    evaluate.add_argument("--split", choices=("train", "val", "test"), default="test")
    evaluate.set_defaults(handler=cmd_evaluate)

    predict = commands.add_parser("predict", parents=[common], help="forecast past the end of a CSV")
    predict.add_argument("--checkpoint", type=Path, required=True)
    predict.add_argument("--input", type=Path, help="CSV to forecast from (defaults to data.csv_path)")
    predict.add_argument("--plot", action="store_true", help="also write forecast.png")
    predict.set_defaults(handler=cmd_predict)

    bench = commands.add_parser("bench", parents=[common], help="time the forward pass at L, 2L and 4L")
    bench.add_argument("--repeats", type=int, default=20)
    bench.add_argument("--warmup", type=int, default=3)
    bench.add_argument("--dense", action="store_true", help="also time a dense single-level encoder")
    bench.set_defaults(handler=cmd_bench)

    gradcheck = commands.add_parser("gradcheck", parents=[common], help="finite-difference gradient audit")
    gradcheck.add_argument("--samples", type=int, default=25, help="coordinates checked per tensor")
    gradcheck.set_defaults(handler=cmd_gradcheck)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.log_level or default_log_level())
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code

    try:
        return args.handler(args)
    except TwinFormerError as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
