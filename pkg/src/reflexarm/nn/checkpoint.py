"""Checkpoint directory format: meta.json plus one raw params.bin blob.

Layout is versioned by a magic string. meta.json records the ordered
parameter table (name, dtype, shape, byte offset) and any extra metadata
the caller wants to round-trip; params.bin is the little-endian
concatenation of the parameter arrays in table order.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = "RPCK0001"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, module, extra=None):
    """Write the module's parameters under ``path`` (a directory)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    table = []
    blobs = []
    offset = 0
    for name, p in module.named_parameters():
        arr = np.ascontiguousarray(p.data)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        table.append({
            "name": name,
            "dtype": str(arr.dtype),
            "shape": list(arr.shape),
            "offset": offset,
        })
        blobs.append(raw)
        offset += len(raw)
    meta = {"magic": MAGIC, "params": table, "total_bytes": offset}
    if extra is not None:
        meta["extra"] = extra
    (path / "params.bin").write_bytes(b"".join(blobs))
    with open(path / "meta.json", "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True)


def read_checkpoint_extra(path):
    """Extra metadata only; lets callers size a module before loading."""
    path = Path(path)
    try:
        with open(path / "meta.json") as f:
            meta = json.load(f)
    except FileNotFoundError:
        raise CheckpointError(f"no checkpoint at {path}")
    if meta.get("magic") != MAGIC:
        raise CheckpointError(f"bad magic in {path}: {meta.get('magic')!r}")
    return meta.get("extra")


def load_checkpoint(path, module):
    """Load parameters saved by save_checkpoint into ``module`` in place.

    The module must declare exactly the saved parameter names and shapes.
    Returns the extra metadata dict (or None).
    """
    path = Path(path)
    try:
        with open(path / "meta.json") as f:
            meta = json.load(f)
    except FileNotFoundError:
        raise CheckpointError(f"no checkpoint at {path}")
    if meta.get("magic") != MAGIC:
        raise CheckpointError(f"bad magic in {path}: {meta.get('magic')!r}")
    raw = (path / "params.bin").read_bytes()
    if len(raw) != meta["total_bytes"]:
        raise CheckpointError(
            f"params.bin is {len(raw)} bytes, meta says {meta['total_bytes']}")
    saved = {e["name"]: e for e in meta["params"]}
    current = dict(module.named_parameters())
    if set(saved) != set(current):
        missing = sorted(set(current) - set(saved))
        surplus = sorted(set(saved) - set(current))
        raise CheckpointError(
            f"parameter names differ: missing {missing}, surplus {surplus}")
    for name, entry in saved.items():
        p = current[name]
        shape = tuple(entry["shape"])
        if p.data.shape != shape:
            raise CheckpointError(
                f"{name}: saved shape {shape} != module shape {p.data.shape}")
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(raw, dtype=dtype, count=count,
                            offset=entry["offset"]).reshape(shape)
        p.data = arr.astype(np.dtype(entry["dtype"]), copy=True)
    return meta.get("extra")
