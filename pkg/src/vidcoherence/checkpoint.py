"""Checkpoint persistence: manifest JSON plus one little-endian float32 blob."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .optim import ParamStore

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(store: ParamStore, path: str | Path, config=None,
                    step: int = 0) -> None:
    """Write <path>/manifest.json and <path>/params.bin."""
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    params = {}
    offset = 0
    chunks = []
    for name in sorted(store.names()):
        arr = store[name].data.astype("<f4")
        params[name] = {"shape": list(arr.shape), "dtype": "f32le", "offset": offset}
        offset += arr.size
        chunks.append(arr.reshape(-1))
    manifest = {
        "format_version": FORMAT_VERSION,
        "step": step,
        "total_values": offset,
        "params": params,
        "config": config.to_dict() if config is not None else None,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    np.concatenate(chunks).tofile(d / "params.bin") if chunks else (d / "params.bin").touch()


def load_checkpoint(path: str | Path, store: ParamStore,
                    namespaces: list[str] | None = None) -> int:
    """Load parameters into store; restrict to namespaces when given.

    Returns the stored step. Shapes are verified against the store.
    """
    d = Path(path)
    mpath = d / "manifest.json"
    if not mpath.exists():
        raise CheckpointError(f"no checkpoint at {d}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {manifest.get('format_version')} unsupported")
    blob = np.fromfile(d / "params.bin", dtype="<f4")
    if blob.size != manifest["total_values"]:
        raise CheckpointError(
            f"truncated blob: expected {manifest['total_values']} values, got {blob.size}")
    if namespaces is not None:
        present = {n.split(".", 1)[0] for n in manifest["params"]}
        missing = [ns for ns in namespaces if ns not in present]
        if missing:
            raise CheckpointError(f"checkpoint missing namespaces: {missing}")
    for name, meta in manifest["params"].items():
        ns = name.split(".", 1)[0]
        if namespaces is not None and ns not in namespaces:
            continue
        if name not in store:
            raise CheckpointError(f"checkpoint parameter {name!r} unknown to this model")
        shape = tuple(meta["shape"])
        cur = store[name]
        if cur.data.shape != shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: model has {cur.data.shape}, "
                f"checkpoint has {shape}")
        size = int(np.prod(shape)) if shape else 1
        vals = blob[meta["offset"]:meta["offset"] + size]
        cur.data = vals.reshape(shape).astype(cur.data.dtype)
    return int(manifest.get("step", 0))


def read_checkpoint_config(path: str | Path) -> dict | None:
    manifest = json.loads((Path(path) / "manifest.json").read_text())
    return manifest.get("config")
