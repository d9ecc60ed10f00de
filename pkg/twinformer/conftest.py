"""
Shared fixtures for the twinformer test suite.
"""

import os
import sys

import numpy as np
import pytest

# Add the src directory to Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "src"))

from twinformer.config import ModelConfig  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Smallest config that still has several patches and two heads."""
    return ModelConfig(seq_len=12, patch_len=4, d_model=8, heads=2, k=3, horizon=2, n_features=1)


@pytest.fixture
def write_config(tmp_path):
    """Write a YAML run config into tmp_path and return its path."""
    import yaml

    def _write(body, name="run.yaml"):
        body = dict(body)
        body.setdefault("output_dir", str(tmp_path / "runs"))
        path = tmp_path / name
        path.write_text(yaml.safe_dump(body, sort_keys=False))
        return path

    return _write
