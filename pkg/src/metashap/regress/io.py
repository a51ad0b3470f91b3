"""Versioned JSON persistence for fitted models and metrics reports."""

from __future__ import annotations

import json
from pathlib import Path

from metashap.errors import FormatError
from metashap.regress.forest import ForestModel
from metashap.regress.mlp import MlpModel
from metashap.regress.poly import PolyLinearModel

FORMAT = "metashap-model"
VERSION = 1

_KINDS = {"poly": PolyLinearModel, "forest": ForestModel, "mlp": MlpModel}


def model_to_dict(model, meta=None):
    return {"format": FORMAT, "version": VERSION, "meta": meta or {}, "model": model.to_dict()}


def save_model(path, model, meta=None):
    Path(path).write_text(json.dumps(model_to_dict(model, meta)) + "\n", encoding="utf-8")


def load_model(path):
    """Returns (model, meta)."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid model JSON: {exc}", line=exc.lineno) from None
    if data.get("format") != FORMAT:
        raise FormatError(f"not a {FORMAT} file")
    if data.get("version") != VERSION:
        raise FormatError(f"unsupported model version {data.get('version')!r}")
    body = data["model"]
    kind = body.get("kind")
    if kind not in _KINDS:
        raise FormatError(f"unknown model kind {kind!r}")
    return _KINDS[kind].from_dict(body), data.get("meta", {})


def metrics_report(model_kind, target, split_name, metrics):
    return {"model": model_kind, "target": target, "split": split_name, **metrics.to_dict()}
