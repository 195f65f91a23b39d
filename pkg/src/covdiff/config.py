"""Experiment configuration with strict JSON round-tripping."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .channel import ChannelModelSpec
from .classifier import TrainConfig
from .scenario import ScenarioConfig, config_hash

SCHEMES = ("proposed", "raw_only", "diff_only", "thresholding", "mdl")
DL_SCHEMES = {"proposed": "full", "raw_only": "raw_only", "diff_only": "diff_only"}


class ConfigError(ValueError):
    pass


@dataclass
class SweepConfig:
    snr_grid: list[float] = field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0, 25.0])
    kt_grid: list[int] = field(default_factory=lambda: [4, 5, 6, 7, 8])


@dataclass
class DeviationConfig:
    rho_grid: list[float] = field(default_factory=lambda: [0.9, 0.95, 0.98, 0.99, 0.995, 0.998])
    trials: int = 10_000


@dataclass
class CorrCurveConfig:
    max_delta_f: int = 50
    trials: int = 100_000


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    deviation: DeviationConfig = field(default_factory=DeviationConfig)
    corr_curve: CorrCurveConfig = field(default_factory=CorrCurveConfig)
    n_train: int = 50_000
    n_val: int = 10_000
    n_test: int = 10_000
    root_seed: int = 0
    schemes: list[str] = field(default_factory=lambda: list(SCHEMES))
    retrain_per_point: bool = False
    workers: int = 1

    def __post_init__(self):
        if not self.sweep.snr_grid or not self.sweep.kt_grid:
            raise ConfigError("sweep grids must be nonempty")
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ConfigError("dataset sizes must be >= 1")
        unknown = set(self.schemes) - set(SCHEMES)
        if unknown or not self.schemes:
            raise ConfigError(f"unknown or empty schemes: {sorted(unknown)}")

    @property
    def channel(self) -> ChannelModelSpec:
        return self.scenario.channel

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["train"] = self.train.to_dict()
        return d

    def hash(self) -> str:
        return config_hash(self.to_dict())


_NESTED = {
    ExperimentConfig: {
        "scenario": ScenarioConfig,
        "train": TrainConfig,
        "sweep": SweepConfig,
        "deviation": DeviationConfig,
        "corr_curve": CorrCurveConfig,
    },
    ScenarioConfig: {"channel": ChannelModelSpec},
}


def _build(cls, doc, path: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(doc) - names
    if extra:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(extra)}")
    kwargs = {}
    for k, v in doc.items():
        sub = _NESTED.get(cls, {}).get(k)
        kwargs[k] = _build(sub, v, f"{path}.{k}" if path else k) if sub else v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def config_from_dict(doc: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, doc, "")


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(doc)


def save_config(cfg: ExperimentConfig, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
