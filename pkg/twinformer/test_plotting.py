#!/usr/bin/env python3
"""
Smoke tests for the optional figures.
"""

import os
import sys

import numpy as np
import pytest

# Add the src directory to Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "src"))

pytest.importorskip("matplotlib")

from twinformer.plotting import plot_forecast, plot_loss_curve  # noqa: E402


def test_loss_curve_figure(tmp_path):
    path = plot_loss_curve([1, 2, 3], [0.5, 0.2, 0.1], [0.6, 0.3, 0.25], tmp_path / "loss.png")
    assert path.stat().st_size > 0


def test_forecast_figure(tmp_path):
    path = plot_forecast(np.sin(np.arange(24.0)), np.cos(np.arange(6.0)), tmp_path / "forecast.png")
    assert path.read_bytes()[:4] == b"\x89PNG"
