"""
Run orchestration behind the CLI subcommands.

Each function takes a validated RunConfig, does one job end to end and
writes its artifacts; the CLI only parses flags, prints and maps errors to
exit codes.
"""

import logging
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import yaml
from pydantic import BaseModel

from .bench import BenchResult, run_bench
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ModelConfig, RunConfig
from .data import RawSeries, WindowedDataset, load_csv, prepare_dataset, synth_series
from .errors import CheckpointError, ConfigError, DataError
from .gradcheck import GradCheckReport, audit_model
from .model import TwinFormerParams, predict_window
from .training import Metrics, TrainReport, evaluate, train, write_loss_curve

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class SplitEvaluation(BaseModel):
    split: str
    checkpoint: str
    n_windows: int
    metrics: Metrics


@dataclass
class TrainingRun:
    run_dir: Path
    report: TrainReport
    checkpoint: Path


def make_run_dir(base: Path, seed: int) -> Path:
    """Create <base>/<timestamp>-seed<seed>, suffixing -1, -2... on collision."""
    stem = f"{datetime.now().strftime('%Y%m%d-%H%M%S')}-seed{seed}"
    candidate = Path(base) / stem
    counter = 0
    while candidate.exists():
        counter += 1
        candidate = Path(base) / f"{stem}-{counter}"
    try:
        candidate.mkdir(parents=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {candidate}: {exc}") from exc
    return candidate


def attach_log_file(run_dir: Path) -> logging.Handler:
    handler = logging.FileHandler(Path(run_dir) / "run.log", encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logging.getLogger().addHandler(handler)
    return handler


def load_series(cfg: RunConfig) -> RawSeries:
    data = cfg.data
    if data.synthetic is not None:
        return synth_series(data.synthetic, data.length, cfg.seed)
    return load_csv(data.csv_path, data.feature_columns, data.target_column, data.timestamp_column)


def target_index_for(cfg: RunConfig, series: RawSeries) -> int:
    """Check the series against the model config and return the target column index."""
    if series.n_features != cfg.model.n_features:
        raise ConfigError(
            f"model.n_features={cfg.model.n_features} but {series.source} provides "
            f"{series.n_features} feature column(s) {series.columns}"
        )
    if cfg.data.target_column is not None:
        index = series.index_of(cfg.data.target_column)
        if index != cfg.model.target_index:
            raise ConfigError(
                f"model.target_index={cfg.model.target_index} but target column "
                f"{cfg.data.target_column!r} is feature #{index}"
            )
    return cfg.model.target_index


def build_dataset(cfg: RunConfig, series: Optional[RawSeries] = None) -> WindowedDataset:
    series = series if series is not None else load_series(cfg)
    target_index = target_index_for(cfg, series)
    return prepare_dataset(series, cfg.model.seq_len, cfg.model.horizon, target_index, cfg.data.split)


def check_model_match(saved: ModelConfig, expected: ModelConfig) -> None:
    for name in ModelConfig.model_fields:
        ours, theirs = getattr(saved, name), getattr(expected, name)
        if ours != theirs:
            raise CheckpointError(f"checkpoint model.{name}={ours} does not match config model.{name}={theirs}")


def run_training(cfg: RunConfig, plot: bool = False) -> TrainingRun:
    run_dir = make_run_dir(cfg.output_dir, cfg.seed)
    handler = attach_log_file(run_dir)
    try:
        logger.info("Run directory %s", run_dir)
        (run_dir / "config.yaml").write_text(yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False))
        dataset = build_dataset(cfg)
        params = TwinFormerParams.initialize(cfg.model, cfg.seed)
        logger.info("Model has %d parameters", params.parameter_count())
        report = train(params, dataset, cfg.model, cfg.train)

        checkpoint = save_checkpoint(
            run_dir / "checkpoint.twfm",
            params,
            cfg.model,
            dataset.scaler,
            metadata={
                "run_name": cfg.name,
                "seed": cfg.seed,
                "columns": dataset.columns,
                "target_column": dataset.columns[cfg.model.target_index],
                "best_epoch": report.best_epoch,
            },
        )
        (run_dir / "train_report.json").write_text(report.model_dump_json(indent=2))
        write_loss_curve(report, run_dir / "loss_curve.csv")
        if plot:
            from .plotting import plot_loss_curve

            plot_loss_curve(
                [r.epoch for r in report.epochs],
                [r.train_loss for r in report.epochs],
                [r.val_loss for r in report.epochs],
                run_dir / "loss_curve.png",
            )
        return TrainingRun(run_dir=run_dir, report=report, checkpoint=checkpoint)
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()


def _output_dir(out: Optional[Path], checkpoint: Path) -> Path:
    target = Path(out) if out is not None else Path(checkpoint).parent
    try:
        target.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {target}: {exc}") from exc
    return target


def run_evaluation(cfg: RunConfig, checkpoint_path: Path, split: str, out: Optional[Path] = None) -> Path:
    ckpt = load_checkpoint(checkpoint_path)
    check_model_match(ckpt.config, cfg.model)
    dataset = build_dataset(cfg)
    if ckpt.scaler is not None and not (
        np.array_equal(ckpt.scaler.x_min, dataset.scaler.x_min) and np.array_equal(ckpt.scaler.x_max, dataset.scaler.x_max)
    ):
        logger.warning("Scaler refit on the configured data differs from the one stored in %s", checkpoint_path)
    windows = dataset.split(split)
    record = SplitEvaluation(
        split=split,
        checkpoint=str(checkpoint_path),
        n_windows=len(windows),
        metrics=evaluate(ckpt.params, ckpt.config, windows, dataset.scaler),
    )
    path = _output_dir(out, checkpoint_path) / f"metrics_{split}.json"
    path.write_text(record.model_dump_json(indent=2))
    logger.info("Wrote %s", path)
    return path


def forecast_from_csv(ckpt: Checkpoint, cfg: RunConfig, csv_path: Path) -> Dict[str, np.ndarray]:
    """Forecast H steps past the last L rows of a CSV, in original units."""
    model = ckpt.config
    if ckpt.scaler is None:
        raise CheckpointError("checkpoint carries no scaler; cannot map forecasts to original units")
    columns: Optional[List[str]] = ckpt.metadata.get("columns") or cfg.data.feature_columns
    series = load_csv(csv_path, columns, None, cfg.data.timestamp_column)
    if series.n_features != model.n_features:
        raise DataError(f"{csv_path}: expected {model.n_features} feature column(s), found {series.n_features}")
    if series.length < model.seq_len:
        raise DataError(f"{csv_path}: prediction needs at least L={model.seq_len} rows, got {series.length}")
    window = series.values[-model.seq_len :]
    scaled = predict_window(ckpt.params, model, ckpt.scaler.transform(window))
    return {
        "history": window[:, model.target_index],
        "forecast": ckpt.scaler.inverse_transform_column(scaled, model.target_index),
    }


def run_prediction(
    cfg: RunConfig,
    checkpoint_path: Path,
    csv_path: Optional[Path] = None,
    out: Optional[Path] = None,
    plot: bool = False,
) -> Path:
    csv_path = csv_path or cfg.data.csv_path
    if csv_path is None:
        raise ConfigError("predict needs --input or a data.csv_path in the config")
    ckpt = load_checkpoint(checkpoint_path)
    result = forecast_from_csv(ckpt, cfg, Path(csv_path))
    target = _output_dir(out, checkpoint_path)
    path = target / "forecast.csv"
    frame = pd.DataFrame({"step": np.arange(1, len(result["forecast"]) + 1), "value": result["forecast"]})
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    if plot:
        from .plotting import plot_forecast

        plot_forecast(result["history"], result["forecast"], target / "forecast.png")
    logger.info("Wrote %s", path)
    return path


def run_benchmark(cfg: RunConfig, repeats: int = 20, warmup: int = 3, dense: bool = False) -> Dict[str, object]:
    run_dir = make_run_dir(cfg.output_dir, cfg.seed)
    result: BenchResult = run_bench(cfg.model, repeats=repeats, warmup=warmup, seed=cfg.seed, dense=dense)
    frame = pd.DataFrame([row.model_dump(exclude_none=True) for row in result.rows])
    path = run_dir / "bench.csv"
    frame.to_csv(path, index=False, float_format="%.9g", lineterminator="\n")
    logger.info("Wrote %s", path)
    return {"path": path, "result": result}


def run_gradcheck(cfg: RunConfig, samples: int = 25) -> Dict[str, object]:
    run_dir = make_run_dir(cfg.output_dir, cfg.seed)
    params = TwinFormerParams.initialize(cfg.model, cfg.seed)
    report: GradCheckReport = audit_model(params, cfg.model, seed=cfg.seed, samples_per_tensor=samples)
    path = run_dir / "gradcheck.json"
    path.write_text(report.model_dump_json(indent=2))
    return {"path": path, "report": report}
