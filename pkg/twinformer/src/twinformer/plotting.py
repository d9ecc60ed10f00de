"""
Figures for run artifacts. Requires the optional `plot` extra (matplotlib).
"""

import logging
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError

logger = logging.getLogger(__name__)


def _pyplot():
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise ConfigError("plotting needs matplotlib; install the 'plot' extra") from None
    return plt


def _figure(plt, width: float = 6.0):
    golden_ratio = (math.sqrt(5) - 1.0) / 2.0
    return plt.subplots(figsize=(width, width * golden_ratio))


def plot_loss_curve(epochs: Sequence[int], train_loss: Sequence[float], val_loss: Sequence[float], path: Path) -> Path:
    plt = _pyplot()
    fig, ax = _figure(plt)
    ax.plot(epochs, train_loss, marker="o", label="train")
    ax.plot(epochs, val_loss, marker="s", label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("L2 loss (normalized units)")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    logger.info("Wrote %s", path)
    return Path(path)


def plot_forecast(history: np.ndarray, forecast: np.ndarray, path: Path) -> Path:
    plt = _pyplot()
    fig, ax = _figure(plt)
    past = np.arange(-len(history) + 1, 1)
    ahead = np.arange(1, len(forecast) + 1)
    ax.plot(past, history, label="observed")
    ax.plot(ahead, forecast, marker=".", label="forecast")
    ax.axvline(0.5, color="grey", linewidth=0.8, linestyle="--")
    ax.set_xlabel("step")
    ax.set_ylabel("target")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    logger.info("Wrote %s", path)
    return Path(path)
