"""Self-describing checkpoint files.

A checkpoint is a single JSON document holding every named parameter
array with its shape, the full configuration that produced it, and a
schema version. JSON text keeps the format diffable and, because floats
serialize through shortest round-trip repr, reloading reproduces every
parameter bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SCHEMA_VERSION = "1"


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    kind: str  # "head" | "aggregator" | "joint"
    config: dict
    params: dict


def save_checkpoint(path, params, config, kind):
    blob = {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "config": config,
        "params": {
            name: {"shape": list(np.asarray(arr).shape), "data": np.asarray(arr).ravel().tolist()}
            for name, arr in params.items()
        },
    }
    Path(path).write_text(json.dumps(blob, sort_keys=True) + "\n")


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    try:
        blob = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {e.msg}") from None
    if blob.get("schema_version") != SCHEMA_VERSION:
        raise CheckpointError(f"unsupported checkpoint schema {blob.get('schema_version')!r}")
    params = {}
    for name, entry in blob["params"].items():
        shape = tuple(entry["shape"])
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != int(np.prod(shape)):
            raise CheckpointError(f"parameter {name!r}: data does not match shape {shape}")
        params[name] = data.reshape(shape)
    return Checkpoint(kind=blob["kind"], config=blob["config"], params=params)
