#!/usr/bin/env python3
"""
Tests for the feature and model containers.
"""

import json
import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path to import modules
PROJECT_ROOT = Path(__file__).parent.parent
sys.path.append(str(PROJECT_ROOT))

from speakerid.errors import DataError
from speakerid.frontend import FeatureSequence, extract
from speakerid.models import ClassifierConfig, enroll, score_all
from speakerid.storage import load_features, load_model, load_models, save_features, save_model
from speakerid.transforms import TransformChain, apply_chain


@pytest.fixture
def utterance():
    return extract(np.random.default_rng(0).standard_normal(8000), meta={"source": "noise.wav"})


def test_features_are_stored_exactly(tmp_path, utterance):
    path = save_features(utterance, tmp_path / "f.json")
    loaded = load_features(path)
    assert np.array_equal(loaded.vectors, utterance.vectors)
    assert np.array_equal(loaded.lpc, utterance.lpc)
    assert loaded.meta == {"source": "noise.wav"}
    assert (loaded.gated, loaded.dropped, loaded.chain) == (utterance.gated, utterance.dropped, "LPCC")

    again = save_features(utterance, tmp_path / "g.json")
    assert path.read_bytes() == again.read_bytes()


def test_empty_and_transformed_features(tmp_path, utterance):
    empty = load_features(save_features(extract(np.zeros(8000)), tmp_path / "empty.json"))
    assert empty.vectors.shape == (0, 16)

    dropped = apply_chain(TransformChain.parse("LPCC3P"), utterance)
    loaded = load_features(save_features(dropped, tmp_path / "d.json"))
    assert loaded.first_index == 3
    assert loaded.chain == "LPCC3P"
    assert loaded.dim == 14


@pytest.mark.parametrize("kind", ["vq", "cm"])
def test_models_score_identically_after_reload(tmp_path, kind):
    rng = np.random.default_rng(1)
    config = ClassifierConfig(kind=kind, bits=4)
    chain = TransformChain.parse("CMS+SIGMA")
    order = config.effective_order
    train = FeatureSequence(rng.standard_normal((300, order)), lpc=None)
    fitted = chain.fit([train])
    model = enroll("spk01", apply_chain(fitted, train), config, fitted, seed=3)

    path = save_model(model, tmp_path / "spk01.json")
    loaded = load_model(path)
    assert loaded.id == "spk01"
    assert loaded.chain.name == "CMS+SIGMA"
    assert np.array_equal(loaded.chain.steps[1].sigma.w, fitted.steps[1].sigma.w)
    assert loaded.frontend == model.frontend

    test = apply_chain(fitted, FeatureSequence(rng.standard_normal((120, order))))
    assert np.array_equal(score_all([loaded], test), score_all([model], test))
    assert save_model(loaded, tmp_path / "copy.json").read_bytes() == path.read_bytes()


def test_load_models_orders_by_speaker(tmp_path):
    config = ClassifierConfig(bits=2)
    for label in ("spk03", "spk01", "spk02"):
        seq = FeatureSequence(np.random.default_rng(len(label)).standard_normal((20, 16)))
        save_model(enroll(label, seq, config), tmp_path / f"{label[::-1]}.json")
    assert [model.id for model in load_models(tmp_path)] == ["spk01", "spk02", "spk03"]

    with pytest.raises(DataError):
        load_models(tmp_path / "none")
    (tmp_path / "empty").mkdir()
    with pytest.raises(DataError):
        load_models(tmp_path / "empty")


def test_container_errors(tmp_path, utterance):
    with pytest.raises(DataError):
        load_features(tmp_path / "missing.json")

    garbage = tmp_path / "garbage.json"
    garbage.write_text("{not json", encoding="utf-8")
    with pytest.raises(DataError):
        load_features(garbage)

    features = save_features(utterance, tmp_path / "f.json")
    with pytest.raises(DataError):
        load_model(features)

    document = json.loads(features.read_text(encoding="utf-8"))
    document["version"] = 99
    features.write_text(json.dumps(document), encoding="utf-8")
    with pytest.raises(DataError):
        load_features(features)

    document["version"] = 1
    del document["vectors"]
    features.write_text(json.dumps(document), encoding="utf-8")
    with pytest.raises(DataError):
        load_features(features)
