#!/usr/bin/env python3
"""
Tests for experiment files, environment settings and logging setup.
"""

import logging
import sys
from pathlib import Path

import pytest
import yaml

# Add project root to path to import modules
PROJECT_ROOT = Path(__file__).parent.parent
sys.path.append(str(PROJECT_ROOT))

from speakerid.config import load_config
from speakerid.errors import ConfigError
from speakerid.logs import setup_logging


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


def test_paths_resolve_against_the_config_file(tmp_path):
    path = write_yaml(tmp_path / "exp.yaml", {
        "manifest": "corpus/manifest.csv",
        "scenario_preset": {"name": "microphone", "options": {"session": "S1"}},
    })
    config = load_config(path)
    assert config.manifest == tmp_path / "corpus" / "manifest.csv"
    assert config.output.directory == tmp_path / "results"
    assert [s.name for s in config.resolved_scenarios()] == ["M1M1", "M1M3", "M3M3", "M3M1"]
    assert config.chains == ["LPCC"]
    assert config.classifier.kind == "vq"


def test_overrides_win(tmp_path, monkeypatch):
    monkeypatch.setenv("SPEAKERID_WORKERS", "3")
    path = write_yaml(tmp_path / "exp.yaml", {
        "manifest": "/data/manifest.csv",
        "scenario_preset": {"name": "language"},
        "master_seed": 1,
    })
    assert load_config(path).workers == 3

    config = load_config(path, {"master_seed": 9, "workers": 2, "output.stem": "run9", "cohort_size": None})
    assert config.master_seed == 9
    assert config.workers == 2
    assert config.output.stem == "run9"
    assert config.cohort_size == 5
    assert config.manifest == Path("/data/manifest.csv")


def test_bad_environment_workers(tmp_path, monkeypatch):
    monkeypatch.setenv("SPEAKERID_WORKERS", "zero")
    path = write_yaml(tmp_path / "exp.yaml", {"manifest": "m.csv", "scenario_preset": {"name": "microphone"}})
    with pytest.raises(ConfigError):
        load_config(path)


@pytest.mark.parametrize("changes, field", [
    ({"chains": ["LPCC", "MFCC"]}, "chains"),
    ({"chains": ["CMS", "CMS"]}, "chains"),
    ({"cohort_size": 0}, "cohort_size"),
    ({"classifier": {"kind": "gmm"}}, "classifier.kind"),
    ({"sphericity": "other"}, "sphericity"),
    ({"colour": "blue"}, "colour"),
])
def test_invalid_fields_are_named(tmp_path, changes, field):
    data = {"manifest": "m.csv", "scenario_preset": {"name": "microphone"}, **changes}
    with pytest.raises(ConfigError) as info:
        load_config(write_yaml(tmp_path / "exp.yaml", data))
    assert field in str(info.value)


def test_config_needs_scenarios(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write_yaml(tmp_path / "exp.yaml", {"manifest": "m.csv"}))
    with pytest.raises(ConfigError):
        load_config(write_yaml(tmp_path / "exp.yaml", {
            "manifest": "m.csv", "scenario_preset": {"name": "session", "options": {"sessions": ["S1"]}},
        }))
    duplicate = {"name": "A", "train": "role == 'train'", "test": "role == 'test'"}
    with pytest.raises(ConfigError):
        load_config(write_yaml(tmp_path / "exp.yaml", {"manifest": "m.csv", "scenarios": [duplicate, duplicate]}))


def test_unreadable_config_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    broken = tmp_path / "broken.yaml"
    broken.write_text("manifest: [unclosed", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(broken)
    listing = tmp_path / "list.yaml"
    listing.write_text("- a\n- b\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(listing)


def test_setup_logging_levels(monkeypatch):
    monkeypatch.setenv("SPEAKERID_LOG_LEVEL", "debug")
    assert setup_logging() == logging.DEBUG
    assert setup_logging("info") == logging.INFO
    monkeypatch.setenv("SPEAKERID_LOG_LEVEL", "loud")
    assert setup_logging() == logging.WARNING
    assert logging.getLogger("speakerid").level == logging.WARNING
