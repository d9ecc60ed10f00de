"""
Finite-difference gradient audits.

Central differences are evaluated with no tape active, so they exercise the
same forward code as training without recording anything. Coordinates are
perturbed in place and restored before the next evaluation.
"""

import logging
from typing import TYPE_CHECKING, Callable, Dict, List, Mapping, Tuple

import numpy as np
from pydantic import BaseModel, Field

from .numerics import Tape, Tensor, backward

if TYPE_CHECKING:
    from .config import ModelConfig
    from .model import TwinFormerParams

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
# below this magnitude errors are measured in absolute terms
DEFAULT_FLOOR = 1e-5


class TensorCheck(BaseModel):
    name: str
    shape: List[int]
    coordinates_checked: int = Field(..., ge=1)
    max_relative_error: float
    max_absolute_error: float
    worst_index: List[int]


class GradCheckReport(BaseModel):
    step: float
    tolerance: float
    tensors: List[TensorCheck]
    max_relative_error: float
    passed: bool

    def failures(self) -> List[TensorCheck]:
        return [t for t in self.tensors if t.max_relative_error > self.tolerance]


def relative_error(analytic: float, numeric: float, floor: float = DEFAULT_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def numeric_gradient(
    f: Callable[[], float],
    tensor: Tensor,
    index: Tuple[int, ...],
    step: float = DEFAULT_STEP,
) -> float:
    """Central difference of f with respect to one coordinate of `tensor`."""
    original = tensor.data[index]
    try:
        tensor.data[index] = original + step
        plus = f()
        tensor.data[index] = original - step
        minus = f()
    finally:
        tensor.data[index] = original
    return (plus - minus) / (2.0 * step)


def _sample_coordinates(tensor: Tensor, samples: int, rng: np.random.Generator) -> List[Tuple[int, ...]]:
    if tensor.size <= samples:
        flat = np.arange(tensor.size)
    else:
        flat = np.sort(rng.choice(tensor.size, size=samples, replace=False))
    return [tuple(int(i) for i in np.unravel_index(f, tensor.shape)) for f in flat]


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Mapping[str, Tensor],
    step: float = DEFAULT_STEP,
    samples_per_tensor: int = 25,
    tolerance: float = DEFAULT_TOLERANCE,
    seed: int = 0,
    floor: float = DEFAULT_FLOOR,
) -> GradCheckReport:
    """Compare tape gradients of a scalar loss against central differences.

    Every tensor in `tensors` is covered; tensors with more coordinates than
    `samples_per_tensor` are sampled without replacement.
    """
    for tensor in tensors.values():
        tensor.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    backward(loss, tape)
    analytic: Dict[str, np.ndarray] = {
        name: (t.grad.copy() if t.grad is not None else np.zeros(t.shape)) for name, t in tensors.items()
    }
    for tensor in tensors.values():
        tensor.zero_grad()

    def evaluate() -> float:
        return loss_fn().item()

    rng = np.random.default_rng(seed)
    checks: List[TensorCheck] = []
    for name, tensor in tensors.items():
        worst_rel, worst_abs, worst_index = 0.0, 0.0, ()
        coordinates = _sample_coordinates(tensor, samples_per_tensor, rng)
        for index in coordinates:
            numeric = numeric_gradient(evaluate, tensor, index, step)
            exact = float(analytic[name][index])
            rel = relative_error(exact, numeric, floor)
            if rel >= worst_rel:
                worst_rel, worst_index = rel, index
            worst_abs = max(worst_abs, abs(exact - numeric))
        checks.append(
            TensorCheck(
                name=name,
                shape=list(tensor.shape),
                coordinates_checked=len(coordinates),
                max_relative_error=worst_rel,
                max_absolute_error=worst_abs,
                worst_index=list(worst_index),
            )
        )
        logger.debug("gradcheck %s: %d coords, max rel %.3e", name, len(coordinates), worst_rel)

    overall = max((c.max_relative_error for c in checks), default=0.0)
    return GradCheckReport(
        step=step,
        tolerance=tolerance,
        tensors=checks,
        max_relative_error=overall,
        passed=overall <= tolerance,
    )


def audit_model(
    params: "TwinFormerParams",
    cfg: "ModelConfig",
    seed: int = 0,
    samples_per_tensor: int = 25,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
) -> GradCheckReport:
    """Gradient audit of the l2 loss of the full forward pass.

    The input window and target are drawn from a generator seeded with `seed`.
    """
    from .model import forward
    from .training import l2_loss

    rng = np.random.default_rng(seed)
    window = Tensor(rng.uniform(0.0, 1.0, size=(cfg.seq_len, cfg.n_features)))
    target = Tensor(rng.uniform(0.0, 1.0, size=(cfg.horizon,)))

    def loss_fn() -> Tensor:
        return l2_loss(forward(window, params, cfg), target)

    report = check_gradients(
        loss_fn,
        dict(params.named_parameters()),
        step=step,
        samples_per_tensor=samples_per_tensor,
        tolerance=tolerance,
        seed=seed,
    )
    logger.info(
        "Gradient audit over %d tensors: max relative error %.3e (%s)",
        len(report.tensors),
        report.max_relative_error,
        "passed" if report.passed else "FAILED",
    )
    return report
