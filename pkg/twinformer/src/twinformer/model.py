"""
TwinFormer forward pass.

    window [L, F]
      -> embed            [L, d]
      -> patchify         [N_p, P, d]   trailing L mod P steps dropped
      -> local_informer   [N_p, P, d]   shared block, attention inside each patch
      -> mean_pool        [N_p, d]
      -> global_informer  [N_p, d]      independent block across patch tokens
      -> gru_aggregate    [d]           final hidden state, h_0 = 0
      -> forecast_head    [H]           all horizon steps at once

The forward pass is defined for a single window; batches are handled by
mapping it over windows. No positional encoding is added anywhere.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Tuple

import numpy as np

from .attention import AttentionConfig, AttentionParams, glorot_uniform, multi_head_csa
from .config import ModelConfig
from .errors import CheckpointError, ConfigError, ShapeError
from .numerics import (
    Tensor,
    add,
    concat_last_axis,
    layer_norm,
    matmul,
    mean_axis,
    mul,
    one_minus,
    relu,
    reshape,
    sigmoid,
    slice_axis,
    tanh,
)

logger = logging.getLogger(__name__)


def _weight(rng: np.random.Generator, fan_in: int, fan_out: int, shape: Tuple[int, ...]) -> Tensor:
    return Tensor(glorot_uniform(rng, fan_in, fan_out, shape), requires_grad=True)


def _zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


@dataclass
class BlockParams:
    """Attention + FFN block: Z1 = Z + MHA(Z); Z2 = Z1 + FFN(LayerNorm(Z1))."""

    attn: AttentionParams
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor
    gamma: Tensor
    beta: Tensor

    @classmethod
    def initialize(cls, cfg: ModelConfig, rng: np.random.Generator) -> "BlockParams":
        d, hidden = cfg.d_model, cfg.ffn_width
        return cls(
            attn=AttentionParams.initialize(d, rng),
            W1=_weight(rng, d, hidden, (d, hidden)),
            b1=_zeros(hidden),
            W2=_weight(rng, hidden, d, (hidden, d)),
            b2=_zeros(d),
            gamma=Tensor(np.ones(d), requires_grad=True),
            beta=_zeros(d),
        )

    def named(self) -> Iterator[Tuple[str, Tensor]]:
        for name, tensor in self.attn.named():
            yield f"attn.{name}", tensor
        yield "ffn.W1", self.W1
        yield "ffn.b1", self.b1
        yield "ffn.W2", self.W2
        yield "ffn.b2", self.b2
        yield "norm.gamma", self.gamma
        yield "norm.beta", self.beta


@dataclass
class GRUParams:
    """Gate weights act on the stacked column [h; x], so each is d x 2d."""

    W_r: Tensor
    W_z: Tensor
    W_h: Tensor
    b_r: Tensor
    b_z: Tensor
    b_h: Tensor

    @classmethod
    def initialize(cls, cfg: ModelConfig, rng: np.random.Generator) -> "GRUParams":
        d = cfg.d_model
        return cls(
            W_r=_weight(rng, 2 * d, d, (d, 2 * d)),
            W_z=_weight(rng, 2 * d, d, (d, 2 * d)),
            W_h=_weight(rng, 2 * d, d, (d, 2 * d)),
            b_r=_zeros(d),
            b_z=_zeros(d),
            b_h=_zeros(d),
        )

    def named(self) -> Iterator[Tuple[str, Tensor]]:
        yield "W_r", self.W_r
        yield "W_z", self.W_z
        yield "W_h", self.W_h
        yield "b_r", self.b_r
        yield "b_z", self.b_z
        yield "b_h", self.b_h


@dataclass
class TwinFormerParams:
    W_e: Tensor
    b_e: Tensor
    local: BlockParams
    global_: BlockParams
    gru: GRUParams
    W_out: Tensor
    b_out: Tensor

    @classmethod
    def initialize(cls, cfg: ModelConfig, seed: int = 0) -> "TwinFormerParams":
        """Glorot-uniform weights, zero biases, unit LayerNorm gain; fully determined by seed."""
        rng = np.random.default_rng(seed)
        d, F, H = cfg.d_model, cfg.n_features, cfg.horizon
        params = cls(
            W_e=_weight(rng, F, d, (F, d)),
            b_e=_zeros(d),
            local=BlockParams.initialize(cfg, rng),
            global_=BlockParams.initialize(cfg, rng),
            gru=GRUParams.initialize(cfg, rng),
            W_out=_weight(rng, d, H, (d, H)),
            b_out=_zeros(H),
        )
        for name, tensor in params.named_parameters():
            tensor.name = name
        return params

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        """Stable (name, tensor) pairs in a fixed order."""
        named: List[Tuple[str, Tensor]] = [("embed.W_e", self.W_e), ("embed.b_e", self.b_e)]
        named += [(f"local.{n}", t) for n, t in self.local.named()]
        named += [(f"global.{n}", t) for n, t in self.global_.named()]
        named += [(f"gru.{n}", t) for n, t in self.gru.named()]
        named += [("head.W_out", self.W_out), ("head.b_out", self.b_out)]
        return named

    def parameter_count(self) -> int:
        return sum(t.size for _, t in self.named_parameters())

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def restore(self, state: Mapping[str, np.ndarray]) -> None:
        for name, tensor in self.named_parameters():
            tensor.data = np.array(state[name], dtype=np.float64, copy=True)
            tensor.zero_grad()

    def zero_grad(self) -> None:
        for _, tensor in self.named_parameters():
            tensor.zero_grad()

    @classmethod
    def from_named(cls, cfg: ModelConfig, arrays: Mapping[str, np.ndarray]) -> "TwinFormerParams":
        """Rebuild parameters from a name -> array mapping, checking every shape."""
        params = cls.initialize(cfg, seed=0)
        expected = dict(params.named_parameters())
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        if missing or extra:
            raise CheckpointError(f"parameter set mismatch: missing={missing} unexpected={extra}")
        for name, tensor in expected.items():
            array = np.asarray(arrays[name], dtype=np.float64)
            if array.shape != tensor.shape:
                raise CheckpointError(f"parameter {name} has shape {array.shape}, expected {tensor.shape}")
        params.restore(arrays)
        return params


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def embed(x: Tensor, W_e: Tensor, b_e: Tensor) -> Tensor:
    """Z0 = X W_e + b_e, bias broadcast over rows."""
    if x.ndim != 2 or x.shape[1] != W_e.shape[0]:
        raise ShapeError("embed", x.shape, W_e.shape)
    return add(matmul(x, W_e), b_e)


def patchify(z: Tensor, patch_len: int) -> Tensor:
    """Split [L, d] into floor(L/P) contiguous [P, d] patches, dropping the tail."""
    length, width = z.shape
    if patch_len < 1 or patch_len > length:
        raise ConfigError(f"patch_len={patch_len} must lie in [1, {length}]")
    n_patches = length // patch_len
    used = n_patches * patch_len
    if used != length:
        z = slice_axis(z, 0, 0, used)
    return reshape(z, (n_patches, patch_len, width))


def feed_forward(u: Tensor, block: BlockParams) -> Tensor:
    return add(matmul(relu(add(matmul(u, block.W1), block.b1)), block.W2), block.b2)


def informer_block(z: Tensor, block: BlockParams, attn_cfg: AttentionConfig, eps: float = 1e-5) -> Tensor:
    """Residual sparse attention, then residual FFN on the layer-normed result.

    Attention runs over the second-to-last axis; any leading axes are
    independent sequences sharing the weights.
    """
    z1 = add(z, multi_head_csa(z, block.attn, attn_cfg))
    return add(z1, feed_forward(layer_norm(z1, block.gamma, block.beta, eps), block))


def local_informer(patches: Tensor, block: BlockParams, cfg: ModelConfig) -> Tensor:
    if patches.ndim != 3:
        raise ShapeError("local_informer", patches.shape, detail="expected [N_p, P, d]")
    return informer_block(patches, block, cfg.attention(), cfg.layer_norm_eps)


def mean_pool(z2: Tensor) -> Tensor:
    """One token per patch: the mean over the time axis."""
    return mean_axis(z2, axis=1)


def global_informer(tokens: Tensor, block: BlockParams, cfg: ModelConfig) -> Tensor:
    if tokens.ndim != 2:
        raise ShapeError("global_informer", tokens.shape, detail="expected [N_p, d]")
    return informer_block(tokens, block, cfg.attention(), cfg.layer_norm_eps)


def gru_step(h: Tensor, x: Tensor, gru: GRUParams) -> Tensor:
    hx = concat_last_axis([h, x])
    r = sigmoid(add(matmul(gru.W_r, hx), gru.b_r))
    z = sigmoid(add(matmul(gru.W_z, hx), gru.b_z))
    h_tilde = tanh(add(matmul(gru.W_h, concat_last_axis([mul(r, h), x])), gru.b_h))
    return add(mul(one_minus(z), h), mul(z, h_tilde))


def gru_aggregate(seq: Tensor, gru: GRUParams) -> Tensor:
    """Run the GRU over the tokens in order from h_0 = 0; return the last state."""
    if seq.ndim != 2:
        raise ShapeError("gru_aggregate", seq.shape, detail="expected [N_p, d]")
    steps, width = seq.shape
    h = Tensor.zeros((width,))
    for p in range(steps):
        x = reshape(slice_axis(seq, 0, p, p + 1), (width,))
        h = gru_step(h, x, gru)
    return h


def forecast_head(h_final: Tensor, W_out: Tensor, b_out: Tensor) -> Tensor:
    return add(matmul(h_final, W_out), b_out)


def forward(x: Tensor, params: TwinFormerParams, cfg: ModelConfig) -> Tensor:
    """Forecast H target values from one normalized [L, F] window."""
    if x.shape != (cfg.seq_len, cfg.n_features):
        raise ShapeError("forward", x.shape, (cfg.seq_len, cfg.n_features))
    z0 = embed(x, params.W_e, params.b_e)
    patches = patchify(z0, cfg.patch_len)
    local = local_informer(patches, params.local, cfg)
    tokens = global_informer(mean_pool(local), params.global_, cfg)
    h_final = gru_aggregate(tokens, params.gru)
    return forecast_head(h_final, params.W_out, params.b_out)


def predict_window(params: TwinFormerParams, cfg: ModelConfig, window: np.ndarray) -> np.ndarray:
    """Forecast from a raw array without recording anything."""
    return forward(Tensor(window), params, cfg).numpy()
