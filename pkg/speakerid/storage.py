"""
JSON containers for feature sequences and speaker models.

Documents are written with sorted keys and Python's round-trip float repr,
so identical inputs give byte-identical files and reads are bit-exact.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any

import numpy as np

from speakerid.errors import DataError
from speakerid.frontend import FeatureSequence, FrontendConfig
from speakerid.models import CovarianceModel, SpeakerModel, VqCodebook
from speakerid.transforms import TransformChain

logger = logging.getLogger(__name__)

FEATURES_FORMAT = "speakerid-features"
MODEL_FORMAT = "speakerid-model"
FORMAT_VERSION = 1


def _matrix(data: Any, width: int) -> np.ndarray:
    return np.asarray(data, dtype=np.float64).reshape(-1, width)


def _write(document: dict[str, Any], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return path


def _read(path: str | Path, expected: str) -> dict[str, Any]:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DataError(f"{path}: file not found") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a JSON document ({exc})") from exc
    if not isinstance(document, dict) or document.get("format") != expected:
        raise DataError(f"{path}: not a {expected} container")
    if document.get("version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported {expected} version {document.get('version')!r}")
    return document


def features_to_dict(seq: FeatureSequence) -> dict[str, Any]:
    return {
        "format": FEATURES_FORMAT,
        "version": FORMAT_VERSION,
        "meta": {str(k): v for k, v in seq.meta.items()},
        "first_index": seq.first_index,
        "chain": seq.chain,
        "dropped": seq.dropped,
        "gated": seq.gated,
        "dim": seq.dim,
        "vectors": seq.vectors.tolist(),
        "lpc_order": None if seq.lpc is None else int(seq.lpc.shape[1]),
        "lpc": None if seq.lpc is None else seq.lpc.tolist(),
    }


def features_from_dict(document: dict[str, Any]) -> FeatureSequence:
    lpc = document.get("lpc")
    return FeatureSequence(
        vectors=_matrix(document["vectors"], int(document["dim"])),
        meta=dict(document.get("meta") or {}),
        lpc=None if lpc is None else _matrix(lpc, int(document["lpc_order"])),
        first_index=int(document.get("first_index", 1)),
        chain=document.get("chain", "LPCC"),
        dropped=int(document.get("dropped", 0)),
        gated=int(document.get("gated", 0)),
    )


def save_features(seq: FeatureSequence, path: str | Path) -> Path:
    """Write a feature container."""
    path = _write(features_to_dict(seq), path)
    logger.debug("wrote %d x %d features to %s", seq.num_frames, seq.dim, path)
    return path


def load_features(path: str | Path) -> FeatureSequence:
    document = _read(path, FEATURES_FORMAT)
    try:
        return features_from_dict(document)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: corrupt feature container ({exc})") from exc


def model_to_dict(model: SpeakerModel) -> dict[str, Any]:
    return {
        "format": MODEL_FORMAT,
        "version": FORMAT_VERSION,
        "speaker": model.id,
        "kind": model.kind,
        "dim": model.dim,
        "chain": model.chain.to_dict(),
        "frontend": model.frontend.model_dump(),
        "test_ridge": model.test_ridge,
        "payload": model.payload.to_dict(),
    }


def model_from_dict(document: dict[str, Any]) -> SpeakerModel:
    kind = document["kind"]
    if kind == "vq":
        payload: VqCodebook | CovarianceModel = VqCodebook.from_dict(document["payload"])
    elif kind == "cm":
        payload = CovarianceModel.from_dict(document["payload"])
    else:
        raise DataError(f"unknown model kind {kind!r}")
    return SpeakerModel(
        id=str(document["speaker"]),
        kind=kind,
        payload=payload,
        chain=TransformChain.from_dict(document["chain"]),
        frontend=FrontendConfig(**document["frontend"]),
        test_ridge=document.get("test_ridge"),
    )


def save_model(model: SpeakerModel, path: str | Path) -> Path:
    """Write a model container."""
    return _write(model_to_dict(model), path)


def load_model(path: str | Path) -> SpeakerModel:
    document = _read(path, MODEL_FORMAT)
    try:
        return model_from_dict(document)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: corrupt model container ({exc})") from exc


def load_models(directory: str | Path) -> list[SpeakerModel]:
    """Every model container in ``directory``, ordered by speaker label."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: model directory not found")
    models = [load_model(path) for path in sorted(directory.glob("*.json"))]
    if not models:
        raise DataError(f"{directory}: no model containers")
    return sorted(models, key=lambda model: model.id)
