"""
Experiment configuration.

An experiment is described by one YAML file; relative paths inside it are
resolved against the file's directory. Environment settings come from the
process environment or a ``.env`` file:

    SPEAKERID_LOG_LEVEL   logging level (default WARNING)
    SPEAKERID_WORKERS     default worker threads (default: CPU count)
"""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Any, Literal

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from speakerid.errors import ChainError, ConfigError, InvalidInputError
from speakerid.evaluation import Scenario, scenario_preset
from speakerid.models import ClassifierConfig, SphericityForm
from speakerid.transforms import TransformChain

logger = logging.getLogger(__name__)


class OutputConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directory: Path = Path("results")
    stem: str = Field("experiment", min_length=1)
    decimal: Literal[".", ","] = "."
    rate_decimals: int = Field(1, ge=0, le=6)
    eer_decimals: int = Field(2, ge=0, le=6)
    baseline: str | None = "LPCC"


class PresetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: Literal["microphone", "session", "language"]
    options: dict[str, Any] = Field(default_factory=dict)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    manifest: Path
    scenarios: list[Scenario] = Field(default_factory=list)
    scenario_preset: PresetConfig | None = None
    chains: list[str] = Field(default_factory=lambda: ["LPCC"], min_length=1)
    classifier: ClassifierConfig = Field(default_factory=ClassifierConfig)
    cohort_size: int = Field(5, ge=1)
    master_seed: int = 0
    workers: int | None = Field(None, ge=1)
    sphericity: SphericityForm = "halved"
    output: OutputConfig = Field(default_factory=OutputConfig)

    @field_validator("chains")
    @classmethod
    def _chains_parse(cls, chains: list[str]) -> list[str]:
        for name in chains:
            try:
                TransformChain.parse(name)
            except ChainError as exc:
                raise ValueError(str(exc)) from exc
        if len(set(chains)) != len(chains):
            raise ValueError("chain names must be unique")
        return chains

    @model_validator(mode="after")
    def _scenarios_given(self) -> "ExperimentConfig":
        if not self.scenarios and self.scenario_preset is None:
            raise ValueError("give either 'scenarios' or 'scenario_preset'")
        try:
            names = [scenario.name for scenario in self.resolved_scenarios()]
        except (InvalidInputError, TypeError) as exc:
            raise ValueError(f"scenario_preset: {exc}") from exc
        if len(set(names)) != len(names):
            raise ValueError(f"scenario names must be unique: {names}")
        return self

    def resolved_scenarios(self) -> list[Scenario]:
        """Explicit scenarios followed by those of the preset."""
        scenarios = list(self.scenarios)
        if self.scenario_preset is not None:
            scenarios += scenario_preset(self.scenario_preset.name, **self.scenario_preset.options)
        return scenarios


def format_errors(exc: ValidationError) -> str:
    """One 'field.path: message' line per validation error."""
    lines = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"]) or "<config>"
        lines.append(f"{location}: {error['msg']}")
    return "\n".join(lines)


def env_workers() -> int | None:
    load_dotenv()
    value = os.getenv("SPEAKERID_WORKERS", "").strip()
    if not value:
        return None
    try:
        workers = int(value)
    except ValueError:
        raise ConfigError(f"SPEAKERID_WORKERS must be an integer, got {value!r}") from None
    if workers < 1:
        raise ConfigError(f"SPEAKERID_WORKERS must be >= 1, got {workers}")
    return workers


def load_config(path: str | Path, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Read, override and validate an experiment file.

    ``overrides`` maps dotted field names (``master_seed``,
    ``output.directory``) to values; None values are ignored.
    """
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        target = data
        *parents, leaf = dotted.split(".")
        for part in parents:
            target = target.setdefault(part, {})
        target[leaf] = value

    if data.get("workers") is None:
        data["workers"] = env_workers()

    try:
        config = ExperimentConfig(**data)
    except ValidationError as exc:
        raise ConfigError(f"{path}: invalid configuration\n{format_errors(exc)}") from exc

    root = path.parent
    updates: dict[str, Any] = {}
    if not config.manifest.is_absolute():
        updates["manifest"] = root / config.manifest
    if not config.output.directory.is_absolute():
        updates["output"] = config.output.model_copy(update={"directory": root / config.output.directory})
    config = config.model_copy(update=updates)
    logger.debug("loaded configuration %s", path)
    return config
