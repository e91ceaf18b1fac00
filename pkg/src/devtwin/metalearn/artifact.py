"""Versioned JSON model artifacts.

Weights are written as decimal ``repr`` strings of float64 values, which
round-trip exactly. A sha256 digest over the canonical payload detects
truncation and tampering.
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from ..dataprep import TransformManifest
from .model import MlpModel, Params

ARTIFACT_FORMAT = "devtwin-model"
ARTIFACT_VERSION = 1


class ArtifactError(ValueError):
    pass


class ArtifactVersionError(ArtifactError):
    pass


class ArtifactCorruptError(ArtifactError):
    pass


def _encode_array(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [repr(float(v)) for v in np.asarray(a, dtype=np.float64).ravel()]}


def _decode_array(d: dict) -> np.ndarray:
    return np.array([float(v) for v in d["data"]], dtype=np.float64).reshape(d["shape"])


def config_digest(train_config: dict | None) -> str:
    return hashlib.sha256(json.dumps(train_config or {}, sort_keys=True).encode()).hexdigest()


def _canonical(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


def model_payload(model: MlpModel, manifest: TransformManifest, train_config: dict | None = None) -> dict:
    return {
        "format": ARTIFACT_FORMAT,
        "version": ARTIFACT_VERSION,
        "hidden_dim": model.hidden_dim,
        "activation": model.activation,
        "feature_order": list(model.feature_order),
        "label_map": {str(k): v for k, v in model.label_map.items()},
        "params": {name: _encode_array(a) for name, a in zip(Params._fields, model.params)},
        "input_shift": None if model.input_shift is None else _encode_array(model.input_shift),
        "input_scale": None if model.input_scale is None else _encode_array(model.input_scale),
        "manifest": manifest.to_dict(),
        "train_config": train_config or {},
        "train_config_digest": config_digest(train_config),
    }


def save_model(path: str | Path, model: MlpModel, manifest: TransformManifest,
               train_config: dict | None = None) -> str:
    """Write the artifact atomically and return its content digest."""
    payload = model_payload(model, manifest, train_config)
    digest = hashlib.sha256(_canonical(payload)).hexdigest()
    doc = {**payload, "sha256": digest}
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, sort_keys=True, indent=1))
    os.replace(tmp, path)
    return digest


def load_model(path: str | Path) -> tuple[MlpModel, TransformManifest, dict]:
    """Return (model, manifest, train_config)."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ArtifactCorruptError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != ARTIFACT_FORMAT:
        raise ArtifactCorruptError(f"{path}: not a model artifact")
    if doc.get("version") != ARTIFACT_VERSION:
        raise ArtifactVersionError(f"{path}: artifact version {doc.get('version')!r}, "
                                   f"expected {ARTIFACT_VERSION}")
    stored = doc.pop("sha256", None)
    if stored != hashlib.sha256(_canonical(doc)).hexdigest():
        raise ArtifactCorruptError(f"{path}: digest mismatch")
    try:
        params = Params(*(_decode_array(doc["params"][n]) for n in Params._fields))
        manifest = TransformManifest.from_dict(doc["manifest"])
        shift = doc.get("input_shift")
        scale = doc.get("input_scale")
        model = MlpModel(params, list(doc["feature_order"]), {int(k): int(v) for k, v in doc["label_map"].items()},
                         doc["activation"],
                         None if shift is None else _decode_array(shift),
                         None if scale is None else _decode_array(scale))
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactCorruptError(f"{path}: malformed artifact ({exc})") from exc
    if model.n_features != len(model.feature_order) or model.n_classes != len(model.label_map):
        raise ArtifactCorruptError(f"{path}: parameter shapes disagree with feature/label maps")
    return model, manifest, doc.get("train_config", {})


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
