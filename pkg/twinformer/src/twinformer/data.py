"""
Series ingestion, min-max scaling and sliding-window datasets.

Splits are chronological and contiguous; every window lies entirely inside
its own split, so no target step of an earlier split is an input step of a
later one. Scaler statistics come from the training split only.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")


@dataclass
class RawSeries:
    """A T x F float matrix in chronological file order."""

    columns: List[str]
    values: np.ndarray
    source: str = "memory"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values.reshape(-1, 1)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise DataError(f"{self.source}: series must be a non-empty T x F matrix, got {self.values.shape}")
        if self.values.shape[1] != len(self.columns):
            raise DataError(f"{self.source}: {len(self.columns)} column names for {self.values.shape[1]} columns")
        if not np.isfinite(self.values).all():
            raise DataError(f"{self.source}: series contains non-finite values")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def index_of(self, column: str) -> int:
        try:
            return self.columns.index(column)
        except ValueError:
            raise DataError(f"{self.source}: no column named {column!r}") from None


def load_csv(
    path: Path,
    feature_columns: Optional[Sequence[str]] = None,
    target_column: Optional[str] = None,
    timestamp_column: str = "date",
) -> RawSeries:
    """Read a headered comma-separated file into a RawSeries.

    Columns come back in the requested order. Without an explicit feature
    list every column except the timestamp column is used. The target
    column is appended when it is not already a feature.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"CSV file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise DataError(f"CSV file is empty: {path}") from None
    except pd.errors.ParserError as exc:
        raise DataError(f"could not parse CSV {path}: {exc}") from exc
    if frame.empty:
        raise DataError(f"CSV file has a header but no data rows: {path}")

    if feature_columns:
        columns = list(feature_columns)
    else:
        columns = [c for c in frame.columns if c != timestamp_column]
    if target_column and target_column not in columns:
        columns.append(target_column)
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing column(s) {missing}; available {list(frame.columns)}")
    if not columns:
        raise DataError(f"{path}: no feature columns to read")

    values = np.empty((len(frame), len(columns)))
    for j, column in enumerate(columns):
        raw = frame[column].str.strip()
        parsed = pd.to_numeric(raw, errors="coerce")
        bad = parsed.isna() | ~np.isfinite(parsed.to_numpy(dtype=np.float64, na_value=np.nan))
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            cell = raw.iloc[row]
            shown = "blank cell" if cell == "" else f"non-numeric value {cell!r}"
            # +2: one for the header line, one for 1-based numbering
            raise DataError(f"{path}: {shown} at row {row + 1} (line {row + 2}), column {column!r}")
        values[:, j] = parsed.to_numpy(dtype=np.float64)

    logger.info("Loaded %s: %d rows x %d columns", path, values.shape[0], values.shape[1])
    return RawSeries(columns=columns, values=values, source=str(path))


@dataclass
class MinMaxScaler:
    """Per-feature affine map of the fitted [min, max] range onto [0, 1]."""

    x_min: np.ndarray
    x_max: np.ndarray

    def __post_init__(self):
        self.x_min = np.asarray(self.x_min, dtype=np.float64)
        self.x_max = np.asarray(self.x_max, dtype=np.float64)

    @classmethod
    def fit(cls, values: np.ndarray, columns: Optional[Sequence[str]] = None) -> "MinMaxScaler":
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            raise DataError("cannot fit a scaler on an empty split")
        scaler = cls(values.min(axis=0), values.max(axis=0))
        for j in np.flatnonzero(scaler.span == 0):
            label = columns[j] if columns is not None else f"#{j}"
            logger.warning("Feature %s is constant on the training split; it will scale to 0", label)
        return scaler

    @property
    def span(self) -> np.ndarray:
        return self.x_max - self.x_min

    def _safe_span(self) -> np.ndarray:
        span = self.span
        return np.where(span == 0, 1.0, span)

    def transform(self, values: np.ndarray) -> np.ndarray:
        scaled = (np.asarray(values, dtype=np.float64) - self.x_min) / self._safe_span()
        # constant features map to 0
        return np.where(self.span == 0, 0.0, scaled)

    def inverse_transform(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.span + self.x_min

    def inverse_transform_column(self, values: np.ndarray, index: int) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.span[index] + self.x_min[index]

    def to_dict(self) -> Dict[str, List[float]]:
        return {"x_min": self.x_min.tolist(), "x_max": self.x_max.tolist()}

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "MinMaxScaler":
        return cls(np.asarray(payload["x_min"]), np.asarray(payload["x_max"]))


def split_bounds(length: int, fractions: Sequence[float]) -> List[Tuple[int, int]]:
    """Contiguous [start, stop) ranges; the last split takes the rounding remainder."""
    bounds = []
    start = 0
    for i, fraction in enumerate(fractions):
        stop = length if i == len(fractions) - 1 else start + int(math.floor(length * fraction))
        bounds.append((start, stop))
        start = stop
    return bounds


def fit_transform(series: RawSeries, train_fraction: float) -> Tuple[RawSeries, MinMaxScaler]:
    """Scale every feature with statistics from the leading training portion."""
    if not 0 < train_fraction <= 1:
        raise ConfigError(f"train fraction must lie in (0, 1], got {train_fraction}")
    n_train = int(math.floor(series.length * train_fraction))
    if n_train < 1:
        raise DataError(f"{series.source}: training portion is empty ({series.length} rows x {train_fraction})")
    scaler = MinMaxScaler.fit(series.values[:n_train], series.columns)
    scaled = RawSeries(columns=list(series.columns), values=scaler.transform(series.values), source=series.source)
    return scaled, scaler


@dataclass
class Window:
    start: int
    inputs: np.ndarray
    target: np.ndarray

    @property
    def target_start(self) -> int:
        return self.start + self.inputs.shape[0]


@dataclass
class WindowedDataset:
    train: List[Window]
    val: List[Window] = field(default_factory=list)
    test: List[Window] = field(default_factory=list)
    bounds: Dict[str, Tuple[int, int]] = field(default_factory=dict)
    scaler: Optional[MinMaxScaler] = None
    target_index: int = 0
    columns: List[str] = field(default_factory=list)

    def split(self, name: str) -> List[Window]:
        if name not in SPLIT_NAMES:
            raise ConfigError(f"unknown split {name!r}; choose from {SPLIT_NAMES}")
        return getattr(self, name)

    def sizes(self) -> Dict[str, int]:
        return {name: len(getattr(self, name)) for name in SPLIT_NAMES}


def windows_in_span(values: np.ndarray, start: int, stop: int, seq_len: int, horizon: int, target_index: int) -> List[Window]:
    windows = []
    for s in range(start, stop - seq_len - horizon + 1):
        windows.append(
            Window(
                start=s,
                inputs=values[s : s + seq_len],
                target=values[s + seq_len : s + seq_len + horizon, target_index],
            )
        )
    return windows


def make_windows(
    scaled: RawSeries,
    seq_len: int,
    horizon: int,
    target_index: int,
    fractions: Sequence[float] = (0.7, 0.1, 0.2),
    scaler: Optional[MinMaxScaler] = None,
) -> WindowedDataset:
    """Stride-1 (input, target) windows inside each chronological split."""
    if seq_len < 1 or horizon < 1:
        raise ConfigError(f"seq_len and horizon must be positive, got {seq_len} and {horizon}")
    if not 0 <= target_index < scaled.n_features:
        raise ConfigError(f"target_index={target_index} out of range for {scaled.n_features} features")
    if not 1 <= len(fractions) <= 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise ConfigError(f"split fractions must be one to three positive values summing to 1, got {list(fractions)}")
    if scaled.length < seq_len + horizon:
        raise DataError(
            f"{scaled.source}: {scaled.length} rows cannot hold one window of {seq_len} inputs + {horizon} targets"
        )

    dataset = WindowedDataset(train=[], scaler=scaler, target_index=target_index, columns=list(scaled.columns))
    for name, (start, stop) in zip(SPLIT_NAMES, split_bounds(scaled.length, fractions)):
        windows = windows_in_span(scaled.values, start, stop, seq_len, horizon, target_index)
        if not windows:
            raise DataError(
                f"{name} split spans {stop - start} rows, too short for one window of {seq_len} + {horizon}"
            )
        setattr(dataset, name, windows)
        dataset.bounds[name] = (start, stop)
    logger.info("Windowed dataset: %s", dataset.sizes())
    return dataset


def prepare_dataset(series: RawSeries, seq_len: int, horizon: int, target_index: int, fractions: Sequence[float]) -> WindowedDataset:
    scaled, scaler = fit_transform(series, fractions[0])
    return make_windows(scaled, seq_len, horizon, target_index, fractions, scaler)


def synth_series(kind: str, length: int, seed: int = 0) -> RawSeries:
    """Deterministic acceptance-test series.

    sines: sin(2 pi t / 24) + 0.5 sin(2 pi t / 96) + uniform noise in +-0.05
    ramp:  t / T
    const: zeros
    """
    if length < 1:
        raise ConfigError(f"series length must be at least 1, got {length}")
    t = np.arange(length, dtype=np.float64)
    if kind == "sines":
        noise = np.random.default_rng(seed).uniform(-0.05, 0.05, size=length)
        values = np.sin(2 * np.pi * t / 24) + 0.5 * np.sin(2 * np.pi * t / 96) + noise
    elif kind == "ramp":
        values = t / length
    elif kind == "const":
        values = np.zeros(length)
    else:
        raise ConfigError(f"unknown synthetic series kind {kind!r}; choose sines, ramp or const")
    return RawSeries(columns=["value"], values=values.reshape(-1, 1), source=f"synthetic:{kind}")
