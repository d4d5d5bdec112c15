"""Environment, YAML configuration and name lookups."""

from __future__ import annotations

import os
from importlib import resources
from pathlib import Path
from typing import Any

import yaml
from dotenv import load_dotenv
from pydantic import ValidationError

from compdid.core.errors import ConfigError
from compdid.models.config import BandwidthConfig, CvCriterion, RunConfig
from compdid.tools.kernels import KernelFamily
from compdid.utils.logger import logger

# Load environment variables
load_dotenv()

# User-facing kernel names, including common abbreviations.
KERNEL_FAMILY_MAPPING = {
    "epanechnikov": KernelFamily.EPANECHNIKOV,
    "epa": KernelFamily.EPANECHNIKOV,
    "triangular": KernelFamily.TRIANGULAR,
    "tri": KernelFamily.TRIANGULAR,
    "biweight": KernelFamily.BIWEIGHT,
    "quartic": KernelFamily.BIWEIGHT,
    "triweight": KernelFamily.TRIWEIGHT,
}

CRITERION_MAPPING = {
    "ml": CvCriterion.LOCAL_LIKELIHOOD,
    "likelihood": CvCriterion.LOCAL_LIKELIHOOD,
    "ls": CvCriterion.LEAST_SQUARES,
    "least_squares": CvCriterion.LEAST_SQUARES,
}

# Keys of defaults.yaml that do not belong to RunConfig.
SIMULATION_SECTION = "simulation"


def get_kernel_family(name: str) -> KernelFamily:
    family = KERNEL_FAMILY_MAPPING.get(str(name).lower())
    if not family:
        logger.warning(f"Unknown kernel '{name}', defaulting to epanechnikov")
        family = KernelFamily.EPANECHNIKOV
    return family


def get_criterion(name: str) -> CvCriterion:
    criterion = CRITERION_MAPPING.get(str(name).lower())
    if not criterion:
        logger.warning(f"Unknown CV criterion '{name}', defaulting to ml")
        criterion = CvCriterion.LOCAL_LIKELIHOOD
    return criterion


def default_workers() -> int:
    raw = os.getenv("COMPDID_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning(f"COMPDID_WORKERS={raw!r} is not an integer, using 1 worker")
        return 1


def load_defaults() -> dict[str, Any]:
    text = resources.files("compdid").joinpath("config/defaults.yaml").read_text(encoding="utf-8")
    return yaml.safe_load(text) or {}


def load_yaml(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}", module="cli")
    try:
        content = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"config file {path} is not valid YAML: {e}", module="cli") from e
    if content is None:
        return {}
    if not isinstance(content, dict):
        raise ConfigError(f"config file {path} must contain a mapping at top level", module="cli")
    return content


def deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    """Recursive dict merge; values from ``override`` win."""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _normalize_names(raw: dict[str, Any]) -> dict[str, Any]:
    raw = dict(raw)
    if "kernel" in raw:
        raw["kernel"] = get_kernel_family(raw["kernel"]).value
    bandwidth = raw.get("bandwidth")
    if isinstance(bandwidth, dict) and "criterion" in bandwidth:
        raw["bandwidth"] = {**bandwidth, "criterion": get_criterion(bandwidth["criterion"]).value}
    return raw


def resolve_settings(config_path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    """defaults.yaml, then the user file, then ``overrides`` (later wins)."""
    settings = load_defaults()
    if os.getenv("COMPDID_WORKERS"):
        settings["workers"] = default_workers()
    if config_path is not None:
        settings = deep_merge(settings, load_yaml(config_path))
    if overrides:
        settings = deep_merge(settings, overrides)
    return settings


def build_run_config(settings: dict[str, Any]) -> RunConfig:
    run_settings = {k: v for k, v in settings.items() if k != SIMULATION_SECTION}
    try:
        return RunConfig.model_validate(_normalize_names(run_settings))
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}", module="cli") from e


def build_bandwidth_config(settings: dict[str, Any], coarse: bool | None = None) -> BandwidthConfig:
    """The bandwidth section alone, for runs that do not ingest a CSV."""
    section = _normalize_names({"bandwidth": settings.get("bandwidth") or {}})["bandwidth"]
    if coarse is not None:
        section = {**section, "coarse": coarse}
    try:
        return BandwidthConfig.model_validate(section)
    except ValidationError as e:
        raise ConfigError(f"invalid bandwidth configuration: {e}", module="cli") from e


def load_run_config(config_path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    config = build_run_config(resolve_settings(config_path, overrides))
    logger.debug(f"Resolved run configuration: {config.model_dump(mode='json')}")
    return config
