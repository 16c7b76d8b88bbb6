"""Model checkpoints: a versioned JSON map of parameter name -> values.

Each checkpoint stores the model kind, its architecture config, and every
parameter as shape + row-major values. Loading validates the format version
and returns plain float64 arrays.
"""

import numpy as np

from .errors import CheckpointMismatchError, SchemaVersionError
from .jsonutil import read_json, write_json

CHECKPOINT_VERSION = 1


def save_checkpoint(path, kind, config, params):
    """params: name -> ValueNode or ndarray."""
    blob = {}
    for name, p in params.items():
        arr = np.asarray(getattr(p, "data", p), dtype=np.float64)
        blob[name] = {"shape": list(arr.shape), "values": arr.reshape(-1).tolist()}
    write_json(
        path,
        {
            "format_version": CHECKPOINT_VERSION,
            "kind": kind,
            "config": config,
            "params": blob,
        },
    )


def load_checkpoint(path, expect_kind=None):
    """Returns (kind, config, name -> ndarray)."""
    doc = read_json(path)
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise SchemaVersionError(
            f"{path}: checkpoint format {version!r}, expected {CHECKPOINT_VERSION}"
        )
    kind = doc.get("kind")
    if expect_kind is not None and kind != expect_kind:
        raise CheckpointMismatchError(f"{path}: checkpoint kind {kind!r}, expected {expect_kind!r}")
    params = {}
    for name, entry in doc["params"].items():
        arr = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        params[name] = arr
    return kind, doc.get("config", {}), params


def take_param(params, name, shape):
    """Pop one parameter, validating its shape."""
    if name not in params:
        raise CheckpointMismatchError(f"checkpoint is missing parameter '{name}'")
    arr = params.pop(name)
    if tuple(arr.shape) != tuple(shape):
        raise CheckpointMismatchError(
            f"parameter '{name}' has shape {tuple(arr.shape)}, expected {tuple(shape)}"
        )
    return arr
