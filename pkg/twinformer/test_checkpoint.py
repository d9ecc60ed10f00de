#!/usr/bin/env python3
"""
Tests for the binary checkpoint format.
"""

import json
import os
import struct
import sys

import numpy as np
import pytest

# Add the src directory to Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "src"))

from twinformer.checkpoint import FORMAT_VERSION, MAGIC, load_checkpoint, save_checkpoint
from twinformer.data import MinMaxScaler
from twinformer.errors import CheckpointError
from twinformer.model import TwinFormerParams, predict_window


@pytest.fixture
def saved(tmp_path, tiny_config):
    params = TwinFormerParams.initialize(tiny_config, seed=7)
    scaler = MinMaxScaler(np.array([-1.0]), np.array([3.0]))
    path = save_checkpoint(tmp_path / "model.twfm", params, tiny_config, scaler, metadata={"seed": 7})
    return path, params


def test_roundtrip_restores_everything(saved, tiny_config):
    path, params = saved
    ckpt = load_checkpoint(path)
    assert ckpt.config == tiny_config
    assert ckpt.metadata == {"seed": 7}
    assert np.array_equal(ckpt.scaler.x_max, [3.0])
    for (name, original), (other, restored) in zip(params.named_parameters(), ckpt.params.named_parameters()):
        assert name == other
        assert np.array_equal(original.data, restored.data)

    window = np.random.default_rng(0).uniform(size=(12, 1))
    assert np.array_equal(predict_window(params, tiny_config, window), predict_window(ckpt.params, tiny_config, window))


def test_layout_is_self_describing(saved):
    path, params = saved
    blob = path.read_bytes()
    magic, version, header_len = struct.unpack_from("<4sII", blob, 0)
    assert (magic, version) == (MAGIC, FORMAT_VERSION)
    header = json.loads(blob[12 : 12 + header_len])
    assert header["model_config"]["d_model"] == 8
    first = header["tensors"][0]
    assert first == {"name": "embed.W_e", "shape": [1, 8], "offset": 0, "count": 8}
    payload = blob[12 + header_len :]
    assert len(payload) == 8 * params.parameter_count()
    assert np.array_equal(np.frombuffer(payload[:64], dtype="<f8"), params.W_e.data.reshape(-1))


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "nothing.twfm")


@pytest.mark.parametrize(
    "mangle,message",
    [
        (lambda blob: blob[:6], "truncated"),
        (lambda blob: b"XXXX" + blob[4:], "magic"),
        (lambda blob: blob[:4] + struct.pack("<I", 99) + blob[8:], "version"),
        (lambda blob: blob[:12] + b"[" + blob[13:], "header"),
        (lambda blob: blob[:-3], "whole number"),
        (lambda blob: blob[:-8], "payload holds"),
    ],
)
def test_corrupted_files_are_rejected(saved, mangle, message):
    path, _ = saved
    path.write_bytes(mangle(path.read_bytes()))
    with pytest.raises(CheckpointError, match=message):
        load_checkpoint(path)


def _rewrite_header(path, edit):
    blob = path.read_bytes()
    _, _, header_len = struct.unpack_from("<4sII", blob, 0)
    header = json.loads(blob[12 : 12 + header_len])
    edit(header)
    encoded = json.dumps(header).encode("utf-8")
    path.write_bytes(struct.pack("<4sII", MAGIC, FORMAT_VERSION, len(encoded)) + encoded + blob[12 + header_len :])


@pytest.mark.parametrize(
    "edit",
    [
        lambda h: h["tensors"][0].pop("count"),
        lambda h: h["tensors"][0].pop("offset"),
        lambda h: h["tensors"][0].pop("shape"),
        lambda h: h["tensors"][0].update(offset="start"),
        lambda h: h["tensors"][0].update(shape=[3, 3]),
        lambda h: h["tensors"][-1].update(offset=10**9),
    ],
    ids=["no-count", "no-offset", "no-shape", "text-offset", "bad-shape", "offset-past-end"],
)
def test_corrupted_tensor_index_is_rejected(saved, edit):
    path, _ = saved
    _rewrite_header(path, edit)
    with pytest.raises(CheckpointError, match="tensor index"):
        load_checkpoint(path)


def test_corrupted_scaler_is_rejected(saved):
    path, _ = saved
    _rewrite_header(path, lambda h: h["scaler"].pop("x_max"))
    with pytest.raises(CheckpointError, match="scaler"):
        load_checkpoint(path)
