"""Checkpoint files: a JSON manifest next to a raw little-endian payload.

``model.ckpt.json`` lists tensor names, shapes, dtype and byte offsets;
``model.ckpt.bin`` holds the concatenated tensor bytes. Loading validates
the version and the recorded shapes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import ShapeMismatch

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _payload_path(manifest_path: Path) -> Path:
    return manifest_path.with_suffix(".bin")


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    """Write ``tensors`` (insertion order preserved) and ``meta`` to disk."""
    path = Path(path)
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": "<f8",
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "tensors": entries,
        "meta": meta or {},
    }
    _payload_path(path).write_bytes(b"".join(blobs))
    path.write_text(json.dumps(manifest, indent=2, sort_keys=False) + "\n",
                    encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {manifest.get('version')!r}, "
            f"expected {CHECKPOINT_VERSION}")
    payload = _payload_path(path).read_bytes()
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        start = entry["offset"]
        raw = payload[start:start + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(np.float64)
    return tensors, manifest["meta"]


def assign_state(params: dict[str, "np.ndarray"],
                 loaded: dict[str, np.ndarray]) -> None:
    """Copy loaded arrays into live parameter arrays, checking shapes."""
    missing = set(params) - set(loaded)
    extra = set(loaded) - set(params)
    if missing or extra:
        raise CheckpointError(
            f"tensor names differ from model definition "
            f"(missing {sorted(missing)}, unexpected {sorted(extra)})")
    for name, target in params.items():
        src = loaded[name]
        if src.shape != target.shape:
            raise ShapeMismatch(
                f"checkpoint tensor {name}: shape {src.shape}, "
                f"model expects {target.shape}")
        target[...] = src
