"""Model checkpointing: one .npz per model, no pickled objects.

The archive holds a JSON metadata string (architecture spec plus caller
extras) alongside every parameter and running buffer as named float
arrays, so checkpoints stay portable and inspectable with plain NumPy.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .models import ModelSpec, build_model

__all__ = ["save_checkpoint", "load_checkpoint", "read_meta", "CheckpointError"]

_FORMAT = "iqfp-checkpoint-v1"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, model, extra: dict | None = None) -> None:
    """Write the model's spec, parameters and buffers to `path` (.npz)."""
    meta = {
        "format": _FORMAT,
        "spec": asdict(model.spec),
        "dtype": np.dtype(model.dtype).name,
        "extra": extra or {},
    }
    arrays = {"param/" + name: p.data for name, p in model.named_parameters()}
    for name, buf in model.named_buffers():
        arrays["buffer/" + name] = buf
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, meta=np.array(json.dumps(meta)), **arrays)


def read_meta(path) -> dict:
    """The metadata dict of a checkpoint without rebuilding the model."""
    with np.load(path, allow_pickle=False) as bundle:
        if "meta" not in bundle:
            raise CheckpointError(f"{path}: not a checkpoint (no meta entry)")
        meta = json.loads(str(bundle["meta"]))
    if meta.get("format") != _FORMAT:
        raise CheckpointError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
    return meta


def load_checkpoint(path):
    """Rebuild the model stored at `path`; returns (model, extra_dict)."""
    meta = read_meta(path)
    spec = ModelSpec(**meta["spec"])
    model = build_model(spec, seed=0, dtype=np.dtype(meta.get("dtype", "float32")))
    with np.load(path, allow_pickle=False) as bundle:
        for name, p in model.named_parameters():
            key = "param/" + name
            if key not in bundle:
                raise CheckpointError(f"{path}: missing parameter {name!r}")
            stored = bundle[key]
            if stored.shape != p.data.shape:
                raise CheckpointError(
                    f"{path}: parameter {name!r} has shape {stored.shape}, "
                    f"expected {p.data.shape}"
                )
            p.data = stored.astype(p.data.dtype, copy=False)
        for name, buf in model.named_buffers():
            key = "buffer/" + name
            if key not in bundle:
                raise CheckpointError(f"{path}: missing buffer {name!r}")
            buf[...] = bundle[key]
    model.eval()
    return model, meta["extra"]
