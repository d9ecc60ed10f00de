"""
Training and evaluation.

Mini-batch training minimizes the mean squared error in normalized units
with bias-corrected Adam. Gradients of a batch are accumulated window by
window in a fixed order and averaged before each step, which keeps runs
bit-reproducible for a given seed. Validation loss is tracked every epoch;
training stops after `patience` epochs without improvement (or at
`max_epochs`) and the best-validation parameters are restored.

Metrics are reported in original units after inverting the min-max scaling
of the target column.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from .config import ModelConfig, TrainConfig
from .data import MinMaxScaler, Window, WindowedDataset
from .errors import DataError, GradientAuditError, NumericError, ShapeError
from .model import TwinFormerParams, forward, predict_window
from .numerics import Tape, Tensor, backward, mean_all, square, sub

logger = logging.getLogger(__name__)


class Metrics(BaseModel):
    mae: float
    rmse: float
    r2: Optional[float] = Field(default=None, description="null when the targets have zero variance")
    r2_defined: bool = True
    n_values: int = Field(..., ge=1)


class EpochRecord(BaseModel):
    epoch: int = Field(..., ge=1)
    train_loss: float
    val_loss: float
    improved: bool
    epochs_without_improvement: int = Field(..., ge=0)
    elapsed_seconds: float = Field(..., ge=0)


class TrainReport(BaseModel):
    epochs: List[EpochRecord]
    stopped_epoch: int = Field(..., ge=1)
    best_epoch: int = Field(..., ge=1)
    best_val_loss: float
    stop_reason: Literal["patience", "max_epochs"]
    max_epochs: int = Field(..., ge=1)
    test: Metrics
    baseline_test: Metrics
    skill_ratio: Optional[float] = Field(default=None, description="model test MAE / persistence test MAE")
    n_parameters: int
    seed: int
    split_sizes: Dict[str, int]
    wall_time_seconds: float = Field(..., ge=0)

    @model_validator(mode="after")
    def _check_trace(self) -> "TrainReport":
        if not self.best_epoch <= self.stopped_epoch <= self.max_epochs:
            raise ValueError("expected best_epoch <= stopped_epoch <= max_epochs")
        for record in self.epochs:
            if not (math.isfinite(record.train_loss) and math.isfinite(record.val_loss)):
                raise ValueError(f"epoch {record.epoch} has a non-finite loss")
        return self


@dataclass
class AdamState:
    """First/second moment buffers keyed by parameter name, plus the step count."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def l2_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over the horizon."""
    if pred.shape != target.shape:
        raise ShapeError("l2_loss", pred.shape, target.shape)
    return mean_all(square(sub(pred, target)))


def adam_step(
    params: TwinFormerParams,
    state: AdamState,
    cfg: TrainConfig,
    grads: Optional[Mapping[str, np.ndarray]] = None,
) -> None:
    """Apply one bias-corrected Adam update to every parameter and clear grads."""
    named = params.named_parameters()
    if grads is None:
        grads = {name: tensor.grad for name, tensor in named}
    for name, _ in named:
        if grads.get(name) is None:
            raise GradientAuditError(f"no gradient for parameter {name}")

    state.t += 1
    bias1 = 1.0 - cfg.beta1**state.t
    bias2 = 1.0 - cfg.beta2**state.t
    for name, tensor in named:
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        m, v = state.m[name], state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        tensor.data = tensor.data - cfg.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + cfg.eps)
        tensor.zero_grad()


def accumulate_batch(params: TwinFormerParams, cfg: ModelConfig, batch: Sequence[Window]) -> float:
    """Average gradient of the batch loss into the parameter grads; returns the mean loss."""
    total = 0.0
    for window in batch:
        with Tape() as tape:
            loss = l2_loss(forward(Tensor(window.inputs), params, cfg), Tensor(window.target))
        backward(loss, tape)
        total += loss.item()
    share = 1.0 / len(batch)
    for _, tensor in params.named_parameters():
        if tensor.grad is not None:
            tensor.grad *= share
    return total * share


def mean_loss(params: TwinFormerParams, cfg: ModelConfig, windows: Sequence[Window]) -> float:
    if not windows:
        raise DataError("cannot compute a loss over an empty split")
    losses = [
        float(np.mean((predict_window(params, cfg, w.inputs) - w.target) ** 2)) for w in windows
    ]
    return float(np.mean(losses))


def compute_metrics(pred: np.ndarray, truth: np.ndarray) -> Metrics:
    """MAE, RMSE and R^2 pooled over every horizon step of every window."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape:
        raise ShapeError("compute_metrics", pred.shape, truth.shape)
    if pred.size == 0:
        raise DataError("cannot compute metrics over zero values")
    errors = pred - truth
    sse = float(np.sum(errors * errors))
    mae = float(np.mean(np.abs(errors)))
    rmse = math.sqrt(sse / errors.size)
    total = float(np.sum((truth - truth.mean()) ** 2))
    if total == 0.0:
        logger.warning("Targets have zero variance; R^2 is undefined and reported as null")
        return Metrics(mae=mae, rmse=rmse, r2=None, r2_defined=False, n_values=errors.size)
    return Metrics(mae=mae, rmse=rmse, r2=1.0 - sse / total, n_values=errors.size)


def _to_original_units(values: np.ndarray, scaler: Optional[MinMaxScaler], target_index: int) -> np.ndarray:
    if scaler is None:
        return values
    return scaler.inverse_transform_column(values, target_index)


def predict_split(
    params: TwinFormerParams,
    cfg: ModelConfig,
    windows: Sequence[Window],
    scaler: Optional[MinMaxScaler],
) -> Tuple[np.ndarray, np.ndarray]:
    """Model forecasts and true targets, both [n_windows, H] in original units."""
    if not windows:
        raise DataError("cannot evaluate an empty split")
    pred = np.stack([predict_window(params, cfg, w.inputs) for w in windows])
    truth = np.stack([w.target for w in windows])
    return (
        _to_original_units(pred, scaler, cfg.target_index),
        _to_original_units(truth, scaler, cfg.target_index),
    )


def evaluate(
    params: TwinFormerParams,
    cfg: ModelConfig,
    windows: Sequence[Window],
    scaler: Optional[MinMaxScaler],
) -> Metrics:
    pred, truth = predict_split(params, cfg, windows, scaler)
    return compute_metrics(pred, truth)


def persistence_forecast(window: Window, target_index: int, horizon: int) -> np.ndarray:
    """Repeat the last observed target value across the horizon."""
    return np.full(horizon, window.inputs[-1, target_index])


def evaluate_persistence(
    windows: Sequence[Window],
    scaler: Optional[MinMaxScaler],
    target_index: int,
    horizon: int,
) -> Metrics:
    if not windows:
        raise DataError("cannot evaluate an empty split")
    pred = np.stack([persistence_forecast(w, target_index, horizon) for w in windows])
    truth = np.stack([w.target for w in windows])
    return compute_metrics(
        _to_original_units(pred, scaler, target_index),
        _to_original_units(truth, scaler, target_index),
    )


def train(
    params: TwinFormerParams,
    dataset: WindowedDataset,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
) -> TrainReport:
    """Fit params in place and return the run report."""
    if not dataset.train or not dataset.val or not dataset.test:
        raise DataError(f"training needs non-empty train, val and test splits, got {dataset.sizes()}")
    started = time.perf_counter()
    rng = np.random.default_rng(train_cfg.seed)
    state = AdamState()
    n_train = len(dataset.train)

    best_state = params.snapshot()
    best_val, best_epoch, stale = math.inf, 0, 0
    records: List[EpochRecord] = []
    stop_reason = "max_epochs"
    epoch = 0
    params.zero_grad()

    for epoch in range(1, train_cfg.max_epochs + 1):
        order = rng.permutation(n_train)
        weighted = 0.0
        for batch_index, lo in enumerate(range(0, n_train, train_cfg.batch_size)):
            batch = [dataset.train[i] for i in order[lo : lo + train_cfg.batch_size]]
            try:
                batch_loss = accumulate_batch(params, model_cfg, batch)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {batch_index}: {exc}") from exc
            if not math.isfinite(batch_loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}, batch {batch_index}")
            adam_step(params, state, train_cfg)
            weighted += batch_loss * len(batch)

        train_loss = weighted / n_train
        val_loss = mean_loss(params, model_cfg, dataset.val)
        if not math.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        improved = val_loss < best_val
        if improved:
            best_val, best_epoch, stale = val_loss, epoch, 0
            best_state = params.snapshot()
        else:
            stale += 1
        records.append(
            EpochRecord(
                epoch=epoch,
                train_loss=train_loss,
                val_loss=val_loss,
                improved=improved,
                epochs_without_improvement=stale,
                elapsed_seconds=time.perf_counter() - started,
            )
        )
        logger.info(
            "epoch %d/%d train_loss=%.6g val_loss=%.6g%s",
            epoch,
            train_cfg.max_epochs,
            train_loss,
            val_loss,
            " (best)" if improved else f" ({stale}/{train_cfg.patience} without improvement)",
        )
        if stale >= train_cfg.patience:
            stop_reason = "patience"
            logger.info("Early stopping at epoch %d; best epoch %d", epoch, best_epoch)
            break

    params.restore(best_state)

    test = evaluate(params, model_cfg, dataset.test, dataset.scaler)
    baseline = evaluate_persistence(dataset.test, dataset.scaler, model_cfg.target_index, model_cfg.horizon)
    skill = test.mae / baseline.mae if baseline.mae > 0 else None
    report = TrainReport(
        epochs=records,
        stopped_epoch=epoch,
        best_epoch=best_epoch,
        best_val_loss=best_val,
        stop_reason=stop_reason,
        max_epochs=train_cfg.max_epochs,
        test=test,
        baseline_test=baseline,
        skill_ratio=skill,
        n_parameters=params.parameter_count(),
        seed=train_cfg.seed,
        split_sizes=dataset.sizes(),
        wall_time_seconds=time.perf_counter() - started,
    )
    logger.info(
        "Test MAE=%.6g RMSE=%.6g R2=%s (persistence MAE=%.6g)",
        test.mae,
        test.rmse,
        "n/a" if test.r2 is None else f"{test.r2:.6g}",
        baseline.mae,
    )
    return report


def write_loss_curve(report: TrainReport, path: Path) -> Path:
    frame = pd.DataFrame(
        {
            "epoch": [r.epoch for r in report.epochs],
            "train_loss": [r.train_loss for r in report.epochs],
            "val_loss": [r.val_loss for r in report.epochs],
        }
    )
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return Path(path)
