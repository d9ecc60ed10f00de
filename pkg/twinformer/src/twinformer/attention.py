"""
Multi-head top-k sparse self-attention.

Each query row keeps only its k largest scaled logits before the softmax,
so every attention row has at most k non-zero weights. Heads are slices of
the fused Q/K/V projections and the top-k cut is applied per head.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterator, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import ConfigError, ShapeError
from .numerics import (
    Tensor,
    concat_last_axis,
    matmul,
    scale,
    slice_axis,
    softmax_rows,
    topk_mask_rows,
    transpose_last,
)

logger = logging.getLogger(__name__)


class AttentionConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    d_model: int = Field(..., ge=1, description="Embedding width d")
    heads: int = Field(..., ge=1, description="Head count h")
    k: int = Field(..., ge=1, description="Logits kept per query row")

    @model_validator(mode="after")
    def _heads_divide_width(self) -> "AttentionConfig":
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape: Tuple[int, ...]) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class AttentionParams:
    """Bias-free fused projections, each d x d."""

    W_Q: Tensor
    W_K: Tensor
    W_V: Tensor
    W_O: Tensor

    @classmethod
    def initialize(cls, d_model: int, rng: np.random.Generator) -> "AttentionParams":
        def weight() -> Tensor:
            return Tensor(glorot_uniform(rng, d_model, d_model, (d_model, d_model)), requires_grad=True)

        return cls(W_Q=weight(), W_K=weight(), W_V=weight(), W_O=weight())

    def named(self) -> Iterator[Tuple[str, Tensor]]:
        yield "W_Q", self.W_Q
        yield "W_K", self.W_K
        yield "W_V", self.W_V
        yield "W_O", self.W_O

    def as_dict(self) -> Dict[str, Tensor]:
        return dict(self.named())


def csa_single_head(Q: Tensor, K: Tensor, V: Tensor, k: int) -> Tensor:
    """Top-k sparse attention for one head.

    Inputs are [..., n, d_k]; leading axes are independent sequences (the
    patches of the local stage). Returns A V with A = softmax(topk(QK^T/sqrt(d_k))).
    """
    if Q.shape != K.shape or Q.shape != V.shape:
        raise ShapeError("csa_single_head", Q.shape, K.shape, V.shape)
    head_dim = Q.shape[-1]
    logits = scale(matmul(Q, transpose_last(K)), 1.0 / math.sqrt(head_dim))
    weights = softmax_rows(topk_mask_rows(logits, k))
    return matmul(weights, V)


def dense_attention(Q: Tensor, K: Tensor, V: Tensor) -> Tensor:
    """Unmasked scaled dot-product attention, the quadratic reference."""
    if Q.shape != K.shape or Q.shape != V.shape:
        raise ShapeError("dense_attention", Q.shape, K.shape, V.shape)
    logits = scale(matmul(Q, transpose_last(K)), 1.0 / math.sqrt(Q.shape[-1]))
    return matmul(softmax_rows(logits), V)


def multi_head_csa(x: Tensor, params: AttentionParams, cfg: AttentionConfig) -> Tensor:
    """Self-attention over the second-to-last axis of x, split into cfg.heads heads."""
    if x.shape[-1] != cfg.d_model:
        raise ConfigError(f"attention input width {x.shape[-1]} does not match d_model={cfg.d_model}")
    if x.ndim < 2:
        raise ShapeError("multi_head_csa", x.shape, detail="needs a sequence axis")
    Q = matmul(x, params.W_Q)
    K = matmul(x, params.W_K)
    V = matmul(x, params.W_V)
    if cfg.heads == 1:
        merged = csa_single_head(Q, K, V, cfg.k)
    else:
        width = cfg.head_dim
        heads = []
        for h in range(cfg.heads):
            lo, hi = h * width, (h + 1) * width
            heads.append(
                csa_single_head(
                    slice_axis(Q, -1, lo, hi),
                    slice_axis(K, -1, lo, hi),
                    slice_axis(V, -1, lo, hi),
                    cfg.k,
                )
            )
        merged = concat_last_axis(heads)
    return matmul(merged, params.W_O)
