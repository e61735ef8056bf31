"""Declarative run configuration: one JSON document drives every command.

A config file has up to five sections; each maps directly onto the
corresponding module's dataclass, so the JSON key names are the dataclass
field names. Unknown keys anywhere are hard errors, not warnings, to catch
hyperparameter typos before any compute is spent.

Sections:
  synth       dataset generation recipe (SynthConfig)
  preprocess  per-window filtering/decimation recipe (PreprocessConfig)
  model       architecture geometry (ModelSpec)
  train       optimization recipe (TrainConfig)
  paths       artifact locations {data_dir, checkpoint, report}

Commands only need the sections they consume, so partial configs are
valid; a command missing a required section fails with a ConfigError.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

from .dsp import BandpassSpec, PreprocessConfig
from .models import ModelSpec
from .synth import ImpairmentSpread, SynthConfig, moderate_spread
from .training import TrainConfig

__all__ = [
    "ConfigError",
    "RunPaths",
    "RunConfig",
    "parse_config",
    "serialize_config",
    "load_config",
    "save_config",
    "override_seed",
]


class ConfigError(ValueError):
    """Unknown key, malformed value, or missing required section."""


@dataclass(frozen=True)
class RunPaths:
    data_dir: str = "data"
    checkpoint: str = "model.npz"
    report: str = "report.json"


@dataclass(frozen=True)
class RunConfig:
    """The five sections; absent ones stay None / defaults."""

    synth: Optional[SynthConfig] = None
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: Optional[ModelSpec] = None
    train: Optional[TrainConfig] = None
    paths: RunPaths = field(default_factory=RunPaths)

    def require(self, *sections: str) -> None:
        for name in sections:
            if getattr(self, name) is None:
                raise ConfigError(f"config needs a {name!r} section for this command")


_SECTIONS = ("synth", "preprocess", "model", "train", "paths")


def _field_names(cls) -> tuple:
    return tuple(f.name for f in dataclasses.fields(cls))


def _check_keys(section: str, data: dict, allowed) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown config key: {section}.{key}")


def _build(cls, section: str, data: dict):
    _check_keys(section, data, _field_names(cls))
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config section {section!r}: {exc}") from exc


def _parse_synth(data: dict) -> SynthConfig:
    data = dict(data)
    if isinstance(data.get("snr_db"), (list, tuple)):
        snr = data["snr_db"]
        if len(snr) != 2:
            raise ConfigError("synth.snr_db range needs exactly [low, high]")
        data["snr_db"] = (float(snr[0]), float(snr[1]))
    if "split_fractions" in data:
        data["split_fractions"] = tuple(data["split_fractions"])
    spread = data.get("impairment_spread")
    if isinstance(spread, str):
        if spread != "moderate":
            raise ConfigError(
                f"synth.impairment_spread: unknown preset {spread!r} "
                "(only 'moderate' or an explicit object)"
            )
        data["impairment_spread"] = moderate_spread()
    elif isinstance(spread, dict):
        data["impairment_spread"] = _build(
            ImpairmentSpread, "synth.impairment_spread", spread
        )
    return _build(SynthConfig, "synth", data)


def _parse_preprocess(data: dict) -> PreprocessConfig:
    data = dict(data)
    bandpass = data.get("bandpass")
    if isinstance(bandpass, dict):
        data["bandpass"] = _build(BandpassSpec, "preprocess.bandpass", bandpass)
    return _build(PreprocessConfig, "preprocess", data)


def parse_config(doc: dict) -> RunConfig:
    """Validate a parsed JSON document into a RunConfig.

    Every unknown key is a ConfigError naming the offending dotted path.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    for key in doc:
        if key not in _SECTIONS:
            raise ConfigError(f"unknown config key: {key}")
    kwargs = {}
    if "synth" in doc:
        kwargs["synth"] = _parse_synth(doc["synth"])
    if "preprocess" in doc:
        kwargs["preprocess"] = _parse_preprocess(doc["preprocess"])
    if "model" in doc:
        kwargs["model"] = _build(ModelSpec, "model", doc["model"])
    if "train" in doc:
        kwargs["train"] = _build(TrainConfig, "train", doc["train"])
    if "paths" in doc:
        kwargs["paths"] = _build(RunPaths, "paths", doc["paths"])
    return RunConfig(**kwargs)


def serialize_config(config: RunConfig) -> dict:
    """Inverse of parse_config: parse_config(serialize_config(c)) == c."""
    doc = {}
    if config.synth is not None:
        doc["synth"] = dataclasses.asdict(config.synth)
    doc["preprocess"] = dataclasses.asdict(config.preprocess)
    if config.model is not None:
        doc["model"] = dataclasses.asdict(config.model)
    if config.train is not None:
        doc["train"] = dataclasses.asdict(config.train)
    doc["paths"] = dataclasses.asdict(config.paths)
    return doc


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            doc = json.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    return parse_config(doc)


def save_config(path, config: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(serialize_config(config), handle, indent=2, sort_keys=True)
        handle.write("\n")


def override_seed(config: RunConfig, seed: int) -> RunConfig:
    """Copy with every section seed replaced; used by the --seed flag."""
    updates = {}
    if config.synth is not None:
        updates["synth"] = dataclasses.replace(config.synth, seed=seed)
    if config.train is not None:
        updates["train"] = dataclasses.replace(config.train, seed=seed)
    return dataclasses.replace(config, **updates)
