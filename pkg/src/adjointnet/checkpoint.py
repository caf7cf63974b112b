"""Byte-stable checkpoint files.

A checkpoint is a JSON document holding the estimator parameters, the fitted
scalers and every weight array as base64 little-endian float64. Keys are
sorted and no wall-clock data is stored, so identical models serialize to
identical bytes.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .exceptions import DataFormatError

CHECKPOINT_SCHEMA = "adjointnet.checkpoint/1"


def _encode(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(d):
    return np.frombuffer(base64.b64decode(d["data"]), dtype="<f8").reshape(d["shape"]).astype(np.float64)


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def checkpoint_dict(model, extra=None):
    params = {k: _jsonable(v) for k, v in model.get_params().items()}
    return {
        "schema": CHECKPOINT_SCHEMA,
        "params": params,
        "n_features_in": int(model.n_features_in_),
        "anc_shape": None if model.anc_shape_ is None else list(model.anc_shape_),
        "x_mean": _encode(model.x_mean_),
        "x_scale": _encode(model.x_scale_),
        "y_mean": float(model.y_mean_),
        "y_scale": float(model.y_scale_),
        "weights": {name: _encode(p.data) for name, p in model.named_parameters()},
        "training": model.training_report_.to_dict() if hasattr(model, "training_report_") else None,
        "extra": extra or {},
    }


def dumps(model, extra=None) -> str:
    return json.dumps(checkpoint_dict(model, extra), sort_keys=True, indent=1) + "\n"


def save_checkpoint(model, path, extra=None) -> None:
    """Write ``model`` to ``path``; ``extra`` is an optional JSON-able dict (e.g. run config)."""
    Path(path).write_text(dumps(model, extra), encoding="utf-8")


def load_checkpoint(path):
    """Return ``(model, extra)`` restored from :func:`save_checkpoint` output."""
    from .model import AdjointForecaster

    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("schema") != CHECKPOINT_SCHEMA:
        raise DataFormatError(f"{path} is not a checkpoint of schema {CHECKPOINT_SCHEMA}")
    params = dict(doc["params"])
    for key in ("main_widths", "anc_widths"):
        params[key] = tuple(params[key])
    if isinstance(params.get("epochs"), list):
        params["epochs"] = tuple(params["epochs"])
    model = AdjointForecaster(**params)
    model.build(doc["n_features_in"], doc["anc_shape"])
    model.x_mean_ = _decode(doc["x_mean"])
    model.x_scale_ = _decode(doc["x_scale"])
    model.y_mean_ = float(doc["y_mean"])
    model.y_scale_ = float(doc["y_scale"])
    weights = doc["weights"]
    names = [n for n, _ in model.named_parameters()]
    if sorted(names) != sorted(weights):
        raise DataFormatError(f"{path}: weight names do not match the model architecture")
    for name, p in model.named_parameters():
        arr = _decode(weights[name])
        if arr.shape != p.data.shape:
            raise DataFormatError(f"{path}: {name} has shape {arr.shape}, expected {p.data.shape}")
        p.data[...] = arr
    return model, doc.get("extra", {})
