#!/usr/bin/env python3
"""
Tests for the forward-pass timing harness.
"""

import os
import sys

import pytest

# Add the src directory to Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "src"))

from twinformer import bench
from twinformer.bench import median_time, run_bench
from twinformer.config import ModelConfig, load_run_config


def _fake_clock(ticks):
    values = iter(ticks)
    return lambda: next(values)


def test_median_time_uses_repeats_only():
    calls = []
    clock = _fake_clock([0.0, 1.0, 1.0, 3.0, 3.0, 4.0])
    result = median_time(lambda: calls.append(1), repeats=3, warmup=2, clock=clock)
    assert result == 1.0
    assert len(calls) == 5


def test_run_bench_doubles_length(mocker):
    cfg = ModelConfig(seq_len=8, patch_len=4, d_model=4, heads=2, k=2, horizon=2)
    spy = mocker.spy(bench, "forward")
    result = run_bench(cfg, repeats=2, warmup=1)
    assert [row.seq_len for row in result.rows] == [8, 16, 32]
    assert [row.n_patches for row in result.rows] == [2, 4, 8]
    assert len(result.ratios) == 2
    assert spy.call_count == 3 * (2 + 1)
    assert all(row.dense_median_seconds is None for row in result.rows)


def test_run_bench_ratio_from_clock(mocker):
    cfg = ModelConfig(seq_len=8, patch_len=4, d_model=4, heads=1, k=2, horizon=2)
    mocker.patch.object(bench, "forward", return_value=None)
    # each timed call lasts 1, 2, then 4 ticks at the three lengths
    ticks = []
    now = 0.0
    for duration in (1.0, 2.0, 4.0):
        ticks += [now, now + duration]
        now += duration
    result = run_bench(cfg, repeats=1, warmup=0, clock=_fake_clock(ticks))
    assert result.ratios == pytest.approx([2.0, 2.0])


def test_dense_reference_is_timed():
    cfg = ModelConfig(seq_len=8, patch_len=4, d_model=4, heads=2, k=2, horizon=2)
    result = run_bench(cfg, multipliers=(1, 2), repeats=1, warmup=0, dense=True)
    assert all(row.dense_median_seconds is not None and row.dense_median_seconds > 0 for row in result.rows)


@pytest.mark.slow
def test_forward_time_grows_at_most_linearly_on_bench_config():
    cfg = load_run_config(os.path.join(os.path.dirname(__file__), "configs", "bench.yaml")).model
    assert (cfg.seq_len, cfg.patch_len, cfg.d_model, cfg.heads, cfg.k) == (480, 12, 32, 4, 5)
    result = run_bench(cfg, repeats=10, warmup=3)
    assert [row.seq_len for row in result.rows] == [480, 960, 1920]
    assert all(ratio <= 2.6 for ratio in result.ratios), result.ratios
