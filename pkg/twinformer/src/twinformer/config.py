"""
Run configuration.

A run is described by one declarative YAML file holding the model, training
and data sections; command-line flags override individual values. Defaults
for the output location and log level come from the environment (a `.env`
file is honoured).
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .attention import AttentionConfig
from .errors import ConfigError

load_dotenv()

logger = logging.getLogger(__name__)

SyntheticKind = Literal["sines", "ramp", "const"]


def default_output_dir() -> Path:
    return Path(os.getenv("TWINFORMER_OUTPUT_DIR", "runs"))


def default_log_level() -> str:
    return os.getenv("TWINFORMER_LOG_LEVEL", "INFO").upper()


class ModelConfig(BaseModel):
    """Architecture hyperparameters.

    Defaults: 48-step window, width 32 and top-5 retention; patch length 12
    (four patches per default window) and four heads.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    seq_len: int = Field(default=48, ge=1, description="Input window length L")
    patch_len: int = Field(default=12, ge=1, description="Patch length P")
    d_model: int = Field(default=32, ge=1, description="Embedding width d")
    heads: int = Field(default=4, ge=1, description="Attention heads h")
    k: int = Field(default=5, ge=1, description="Top-k retention per query row")
    ffn_mult: int = Field(default=4, ge=1, description="FFN hidden width multiplier")
    horizon: int = Field(default=24, ge=1, description="Forecast horizon H")
    n_features: int = Field(default=1, ge=1, description="Input features F")
    target_index: int = Field(default=0, ge=0, description="Forecast column within the features")
    layer_norm_eps: float = Field(default=1e-5, gt=0)

    @model_validator(mode="after")
    def _check_invariants(self) -> "ModelConfig":
        if self.patch_len > self.seq_len:
            raise ValueError(f"patch_len={self.patch_len} exceeds seq_len={self.seq_len}")
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.target_index >= self.n_features:
            raise ValueError(f"target_index={self.target_index} is out of range for n_features={self.n_features}")
        return self

    @property
    def n_patches(self) -> int:
        return self.seq_len // self.patch_len

    @property
    def ffn_width(self) -> int:
        return self.ffn_mult * self.d_model

    def attention(self) -> AttentionConfig:
        return AttentionConfig(d_model=self.d_model, heads=self.heads, k=self.k)


class TrainConfig(BaseModel):
    """Optimizer and early-stopping settings; Adam at 1e-3 for at most 20 epochs."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    learning_rate: float = Field(default=1e-3, gt=0)
    beta1: float = Field(default=0.9, gt=0, lt=1)
    beta2: float = Field(default=0.999, gt=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    max_epochs: int = Field(default=20, ge=1)
    patience: int = Field(default=5, ge=1)
    batch_size: int = Field(default=32, ge=1)
    seed: int = 0


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    csv_path: Optional[Path] = None
    synthetic: Optional[SyntheticKind] = None
    length: int = Field(default=3000, ge=1, description="Series length for synthetic data")
    feature_columns: Optional[List[str]] = None
    target_column: Optional[str] = None
    timestamp_column: str = "date"
    split: Tuple[float, ...] = (0.7, 0.1, 0.2)

    @model_validator(mode="after")
    def _one_source(self) -> "DataConfig":
        if (self.csv_path is None) == (self.synthetic is None):
            raise ValueError("exactly one of data.csv_path or data.synthetic must be set")
        return self

    @field_validator("split")
    @classmethod
    def _check_split(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if not 1 <= len(value) <= 3:
            raise ValueError("split needs one to three fractions (train, val, test)")
        if any(f <= 0 for f in value):
            raise ValueError("split fractions must be positive")
        if abs(sum(value) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(value)}")
        return value


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "twinformer"
    seed: int = 0
    output_dir: Path = Field(default_factory=default_output_dir)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataConfig

    @model_validator(mode="after")
    def _propagate_seed(self) -> "RunConfig":
        if self.train.seed != self.seed:
            self.train = self.train.model_copy(update={"seed": self.seed})
        return self


def _describe(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        location = ".".join(str(p) for p in err["loc"]) or "config"
        parts.append(f"{location}: {err['msg']}")
    return "; ".join(parts)


def build_run_config(raw: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    merged = dict(raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as exc:
        raise ConfigError(f"invalid run config: {_describe(exc)}") from exc


def load_run_config(path: Path, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Read a YAML run config; relative CSV paths resolve against the file's directory."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping at the top level")

    data = raw.get("data")
    if isinstance(data, dict) and data.get("csv_path"):
        csv_path = Path(data["csv_path"])
        if not csv_path.is_absolute():
            raw = {**raw, "data": {**data, "csv_path": str(path.parent / csv_path)}}

    cfg = build_run_config(raw, overrides)
    logger.debug("Loaded run config %s from %s", cfg.name, path)
    return cfg
