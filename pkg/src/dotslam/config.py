"""Declarative run configuration loaded from a YAML file."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .instances import SamplingConfig
from .motion import MotionThresholds
from .photo_tracker import SolverConfig

# default observability floor; superseded by `dot calibrate` output
DEFAULT_H_MIN = 42.0


@dataclass
class PipelineConfig:
    dataset: str = ""
    seed: int = 0
    sample_jitter: bool = False
    dilate_masks: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    thresholds: MotionThresholds = field(
        default_factory=lambda: MotionThresholds(h_min=DEFAULT_H_MIN))
    sampling: SamplingConfig = field(default_factory=SamplingConfig)


def _fill(cls, values: dict, section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    return cls(**values)


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(raw, base_dir=path.parent)


def config_from_dict(raw: dict, base_dir: Path | None = None) -> PipelineConfig:
    cfg = PipelineConfig()
    known = {"dataset", "seed", "sample_jitter", "dilate_masks",
             "solver", "thresholds", "sampling"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    cfg.dataset = str(raw.get("dataset", ""))
    if base_dir is not None and cfg.dataset and not Path(cfg.dataset).is_absolute():
        cfg.dataset = str(base_dir / cfg.dataset)
    cfg.seed = int(raw.get("seed", 0))
    cfg.sample_jitter = bool(raw.get("sample_jitter", False))
    cfg.dilate_masks = int(raw.get("dilate_masks", 0))
    cfg.solver = _fill(SolverConfig, raw.get("solver", {}), "solver")
    th = dict(raw.get("thresholds", {}))
    th.setdefault("h_min", DEFAULT_H_MIN)
    cfg.thresholds = _fill(MotionThresholds, th, "thresholds")
    cfg.sampling = _fill(SamplingConfig, raw.get("sampling", {}), "sampling")
    return cfg
