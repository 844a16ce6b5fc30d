"""Binary model checkpoints.

Layout: an 8-byte magic string, a little-endian uint32 header length, a JSON
header (format version, model type, model config, normalizer statistics,
dataset hash, free-form metadata, and the ordered parameter manifest), then
the raw float64 little-endian parameter blocks in manifest order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .dataset import Normalizer
from .ffnn import FfnnConfig, FfnnModel
from .kt import KtConfig, KtModel

MAGIC = b"SLCKPT01"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(
    path,
    model,
    model_type: str,
    dataset_hash: str = "",
    metadata: dict = None,
):
    """Write the model's parameters and enough context to rebuild it."""
    if model_type not in ("kt", "ffnn"):
        raise CheckpointError("unknown model type %r" % model_type)
    names = sorted(model.params)
    manifest = [
        {"name": n, "shape": list(model.params[n].value.shape)} for n in names
    ]
    header = {
        "format": "softlimb-checkpoint-v1",
        "model_type": model_type,
        "config": model.config.as_dict(),
        "normalizer": model.normalizer.as_dict(),
        "dataset_hash": dataset_hash,
        "metadata": metadata or {},
        "parameters": manifest,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n].value, dtype="<f8").tobytes())


def read_checkpoint(path):
    """Return (header dict, {name: float64 array})."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError("not a checkpoint file: bad magic %r" % magic)
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        params = {}
        for entry in header["parameters"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise CheckpointError("truncated parameter block %r" % entry["name"])
            params[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise CheckpointError("trailing bytes after final parameter block")
    return header, params


def load_model(path):
    """Rebuild a KtModel or FfnnModel from a checkpoint file."""
    header, params = read_checkpoint(path)
    normalizer = Normalizer.from_dict(header["normalizer"])
    if header["model_type"] == "kt":
        model = KtModel(KtConfig(**header["config"]), normalizer)
    elif header["model_type"] == "ffnn":
        model = FfnnModel(FfnnConfig(**header["config"]), normalizer)
    else:
        raise CheckpointError("unknown model type %r" % header["model_type"])
    if set(params) != set(model.params):
        raise CheckpointError("parameter names do not match the model config")
    for name, value in params.items():
        if model.params[name].value.shape != value.shape:
            raise CheckpointError("shape mismatch for parameter %r" % name)
        model.params[name].value = value
    return model, header
