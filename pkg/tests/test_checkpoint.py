"""Checkpoint persistence: format, round-trips, partial loads, corruption."""

import json

import numpy as np
import pytest

from vidcoherence.checkpoint import (FORMAT_VERSION, CheckpointError,
                                     load_checkpoint, read_checkpoint_config,
                                     save_checkpoint)
from vidcoherence.config import profile_config
from vidcoherence.optim import ParamStore


def make_store(seed=0):
    store = ParamStore()
    rng = np.random.default_rng(seed)
    store.add("encoder.w", rng.standard_normal((3, 4)).astype(np.float32))
    store.add("encoder.b", rng.standard_normal(4).astype(np.float32))
    store.add("head.w", rng.standard_normal((4, 2)).astype(np.float32))
    return store


def test_roundtrip_bitexact_float32(tmp_path):
    store = make_store()
    cfg = profile_config("tiny")
    save_checkpoint(store, tmp_path / "c", cfg, step=42)
    other = make_store(seed=1)
    step = load_checkpoint(tmp_path / "c", other)
    assert step == 42
    for n in store.names():
        assert np.array_equal(other[n].data, store[n].data)
    assert read_checkpoint_config(tmp_path / "c")["profile"] == "tiny"


def test_manifest_structure(tmp_path):
    save_checkpoint(make_store(), tmp_path / "c", step=1)
    m = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert m["format_version"] == FORMAT_VERSION
    assert m["config"] is None
    assert set(m["params"]) == {"encoder.w", "encoder.b", "head.w"}
    assert m["params"]["encoder.w"]["dtype"] == "f32le"
    blob = np.fromfile(tmp_path / "c" / "params.bin", dtype="<f4")
    assert blob.size == m["total_values"]


def test_partial_load_by_namespace(tmp_path):
    store = make_store()
    save_checkpoint(store, tmp_path / "c")
    other = make_store(seed=1)
    head_before = other["head.w"].data.copy()
    load_checkpoint(tmp_path / "c", other, namespaces=["encoder"])
    assert np.array_equal(other["encoder.w"].data, store["encoder.w"].data)
    assert np.array_equal(other["head.w"].data, head_before)


def test_missing_namespace_rejected(tmp_path):
    store = ParamStore()
    store.add("head.w", np.zeros((2, 2), np.float32))
    save_checkpoint(store, tmp_path / "c")
    with pytest.raises(CheckpointError, match="missing namespaces"):
        load_checkpoint(tmp_path / "c", make_store(), namespaces=["encoder"])


def test_unknown_param_and_shape_mismatch(tmp_path):
    store = make_store()
    save_checkpoint(store, tmp_path / "c")
    slim = ParamStore()
    slim.add("encoder.w", np.zeros((3, 4), np.float32))
    with pytest.raises(CheckpointError, match="unknown"):
        load_checkpoint(tmp_path / "c", slim)
    wrong = make_store()
    wrong._params["encoder.w"].tensor.data = np.zeros((2, 2), np.float32)
    with pytest.raises(CheckpointError, match="shape mismatch"):
        load_checkpoint(tmp_path / "c", wrong)


def test_truncated_blob_detected(tmp_path):
    save_checkpoint(make_store(), tmp_path / "c")
    blob = (tmp_path / "c" / "params.bin").read_bytes()
    (tmp_path / "c" / "params.bin").write_bytes(blob[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "c", make_store())


def test_bad_version_and_missing_checkpoint(tmp_path):
    save_checkpoint(make_store(), tmp_path / "c")
    m = json.loads((tmp_path / "c" / "manifest.json").read_text())
    m["format_version"] = 999
    (tmp_path / "c" / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "c", make_store())
    with pytest.raises(CheckpointError, match="no checkpoint"):
        load_checkpoint(tmp_path / "nope", make_store())
