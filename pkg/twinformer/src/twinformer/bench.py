"""
Forward-pass timing at growing window lengths.

Patch length, width, heads and k stay fixed while L doubles, so the number
of patches grows with L. Each length is timed after warm-up passes and the
median of the repeats is reported. With `dense=True` a single-level encoder
with unmasked attention over the whole window is timed alongside as the
quadratic reference.
"""

import logging
import time
from typing import Callable, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from .attention import AttentionConfig
from .config import ModelConfig
from .model import TwinFormerParams, embed, forecast_head, forward, informer_block
from .numerics import Tensor, mean_axis

logger = logging.getLogger(__name__)

Clock = Callable[[], float]


class BenchRow(BaseModel):
    seq_len: int
    n_patches: int
    repeats: int = Field(..., ge=1)
    median_seconds: float = Field(..., gt=0)
    dense_median_seconds: Optional[float] = None


class BenchResult(BaseModel):
    rows: List[BenchRow]
    ratios: List[float] = Field(default_factory=list, description="t(2L)/t(L) for consecutive rows")


def dense_forward(x: Tensor, params: TwinFormerParams, cfg: ModelConfig) -> Tensor:
    """Single block of dense attention over all L steps, mean-pooled into the head."""
    dense_cfg = AttentionConfig(d_model=cfg.d_model, heads=cfg.heads, k=cfg.seq_len)
    z = informer_block(embed(x, params.W_e, params.b_e), params.local, dense_cfg, cfg.layer_norm_eps)
    return forecast_head(mean_axis(z, axis=0), params.W_out, params.b_out)


def median_time(fn: Callable[[], object], repeats: int, warmup: int, clock: Clock = time.perf_counter) -> float:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        started = clock()
        fn()
        samples.append(clock() - started)
    return float(np.median(samples))


def run_bench(
    cfg: ModelConfig,
    multipliers: Sequence[int] = (1, 2, 4),
    repeats: int = 20,
    warmup: int = 3,
    seed: int = 0,
    dense: bool = False,
    clock: Clock = time.perf_counter,
) -> BenchResult:
    rows: List[BenchRow] = []
    rng = np.random.default_rng(seed)
    for multiplier in multipliers:
        scaled = cfg.model_copy(update={"seq_len": cfg.seq_len * multiplier})
        params = TwinFormerParams.initialize(scaled, seed)
        window = Tensor(rng.uniform(0.0, 1.0, size=(scaled.seq_len, scaled.n_features)))
        sparse = median_time(lambda: forward(window, params, scaled), repeats, warmup, clock)
        dense_time = None
        if dense:
            dense_time = median_time(lambda: dense_forward(window, params, scaled), repeats, warmup, clock)
        rows.append(
            BenchRow(
                seq_len=scaled.seq_len,
                n_patches=scaled.n_patches,
                repeats=repeats,
                median_seconds=sparse,
                dense_median_seconds=dense_time,
            )
        )
        logger.info("L=%d N_p=%d median forward %.6fs", scaled.seq_len, scaled.n_patches, sparse)
    ratios = [later.median_seconds / earlier.median_seconds for earlier, later in zip(rows, rows[1:])]
    return BenchResult(rows=rows, ratios=ratios)
