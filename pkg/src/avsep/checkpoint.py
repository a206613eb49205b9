"""Checkpoints: one flat little-endian float64 blob plus a JSON manifest.

The manifest lists every tensor's name, shape, dtype and byte offset, the model
config and its digest, and free-form lineage metadata. Both files are written
to a temporary name and renamed into place.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .model import Model, ModelConfig

_DTYPE = "<f8"


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save_checkpoint(path, model: Model, meta: dict | None = None) -> dict:
    """Write ``<path>.bin`` and ``<path>.json``; returns the manifest."""
    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    state = model.state()
    entries, chunks, offset = [], [], 0
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype=_DTYPE)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "float64", "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    blob = b"".join(chunks)
    manifest = {
        "tensors": entries,
        "config": model.config.to_dict(),
        "config_hash": model.config.digest(),
        "sha256": hashlib.sha256(blob).hexdigest(),
        "meta": meta or {},
    }
    _atomic_write(base.with_suffix(".bin"), blob)
    _atomic_write(base.with_suffix(".json"), json.dumps(manifest, indent=2, sort_keys=True).encode())
    return manifest


def load_manifest(path) -> dict:
    return json.loads(Path(path).with_suffix(".json").read_text())


def load_checkpoint(path) -> tuple[Model, dict]:
    base = Path(path)
    manifest = load_manifest(base)
    blob = base.with_suffix(".bin").read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise ValueError(f"checkpoint {base} is corrupt (checksum mismatch)")
    state = {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        state[e["name"]] = np.frombuffer(blob, dtype=_DTYPE, count=n, offset=e["offset"]).reshape(e["shape"])
    model = Model(ModelConfig.from_dict(manifest["config"]))
    model.load_state(state)
    return model, manifest
