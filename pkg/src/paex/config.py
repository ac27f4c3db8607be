"""Strict JSON episode configuration.

A config file is a single JSON object with a versioned schema; unknown keys
are rejected so silent drift between a config file and the code is caught
at parse time.  Every field is optional and defaults match the library
defaults, so the empty document is a valid all-defaults config.
"""

from __future__ import annotations

import dataclasses
import json

from .frontier import MODES, PlannerParams
from .sim import EpisodeConfig
from .world import CameraModel

SCHEMA_VERSION = 1

_PLANNER_FIELDS = {f.name for f in dataclasses.fields(PlannerParams)}
_CAMERA_FIELDS = {f.name for f in dataclasses.fields(CameraModel)}
_EPISODE_FIELDS = {"texture_level", "seed", "resolution", "thresholds", "time_cap",
                   "target_rate", "omega_blur", "sigma_min", "sigma_gain", "q_ref"}
_TOP_FIELDS = {"schema_version", "planner", "camera"} | _EPISODE_FIELDS


class ConfigError(ValueError):
    """Configuration file violates the schema."""


def _check_keys(obj: dict, allowed: set, context: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{context} must be a JSON object, got {type(obj).__name__}")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(
            f"unknown key(s) {sorted(unknown)} in {context}; allowed: {sorted(allowed)}")


def parse_config(path: str) -> EpisodeConfig:
    """Load and validate an episode config; missing fields take defaults."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path} is not valid JSON: {err}") from err
    return config_from_dict(doc)


def config_from_dict(doc: dict) -> EpisodeConfig:
    _check_keys(doc, _TOP_FIELDS, "config")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version {version!r} unsupported; expected {SCHEMA_VERSION}")

    planner_doc = dict(doc.get("planner", {}))
    _check_keys(planner_doc, _PLANNER_FIELDS, "config.planner")
    if "ring_radii" in planner_doc:
        planner_doc["ring_radii"] = tuple(planner_doc["ring_radii"])
    try:
        params = PlannerParams(**planner_doc)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"config.planner: {err}") from err

    camera_doc = doc.get("camera", {})
    _check_keys(camera_doc, _CAMERA_FIELDS, "config.camera")
    try:
        camera = CameraModel(**camera_doc)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"config.camera: {err}") from err

    episode_kw = {k: doc[k] for k in _EPISODE_FIELDS if k in doc}
    if "thresholds" in episode_kw:
        episode_kw["thresholds"] = tuple(episode_kw["thresholds"])
    try:
        return EpisodeConfig(params=params, camera=camera, **episode_kw)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"config: {err}") from err


def config_to_dict(config: EpisodeConfig) -> dict:
    """Full explicit document that round-trips through config_from_dict."""
    planner = dataclasses.asdict(config.params)
    camera = dataclasses.asdict(config.camera)
    return {
        "schema_version": SCHEMA_VERSION,
        "planner": planner,
        "camera": camera,
        "texture_level": config.texture_level,
        "seed": config.seed,
        "resolution": config.resolution,
        "thresholds": list(config.thresholds),
        "time_cap": config.time_cap,
        "target_rate": config.target_rate,
        "omega_blur": config.omega_blur,
        "sigma_min": config.sigma_min,
        "sigma_gain": config.sigma_gain,
        "q_ref": config.q_ref,
    }
