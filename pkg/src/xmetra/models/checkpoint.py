"""Flat named-parameter checkpoints (JSON, row-major values)."""

import json
from pathlib import Path

import numpy as np

from xmetra.exceptions import ParseError

FORMAT = "xmetra-checkpoint/1"


def _arrays(state):
    return {k: np.asarray(getattr(v, "values", v), dtype=np.float64) for k, v in state.items()}


def save_checkpoint(path, state, metadata=None):
    arrays = _arrays(state)
    doc = {
        "format": FORMAT,
        "metadata": metadata or {},
        "params": [
            {"name": k, "shape": list(a.shape), "values": a.reshape(-1).tolist()}
            for k, a in sorted(arrays.items())
        ],
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path):
    """Return ``({name: ndarray}, metadata)``."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"checkpoint {path} is not valid JSON: {exc}") from None
    if doc.get("format") != FORMAT:
        raise ParseError(f"unsupported checkpoint format {doc.get('format')!r}", field="format")
    out = {}
    for entry in doc["params"]:
        values = np.asarray(entry["values"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if values.size != int(np.prod(shape, dtype=np.int64)):
            raise ParseError(f"parameter {entry['name']!r}: {values.size} values for shape {shape}", field="values")
        out[entry["name"]] = values.reshape(shape)
    return out, doc.get("metadata", {})
