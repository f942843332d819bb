"""Experiment configuration: one JSON document with every knob and its default."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from mcsloc.dataset import DatasetSpec
from mcsloc.errors import ConfigError
from mcsloc.locmap import LinkAdaptation, RadioEnvironment
from mcsloc.optim import AdamWConfig, OneCycleConfig, TrainConfig
from mcsloc.phy import McsTable, SignalConfig
from mcsloc.tcn import NetworkConfig


@dataclass(frozen=True)
class LocalizationConfig:
    rows: int = 6
    cols: int = 9
    tile_size_m: float = 1.0
    survey_obs_per_tile: int = 500
    trials_per_tile: int = 4
    obs_per_trial: int = 25
    smoothing_alpha: float = 1.0
    merge_factor: int = 2

    def __post_init__(self):
        for name in ("rows", "cols", "survey_obs_per_tile", "trials_per_tile", "obs_per_trial", "merge_factor"):
            if getattr(self, name) < 1:
                raise ConfigError(f"localization.{name} must be >= 1")
        if self.smoothing_alpha < 0 or self.tile_size_m <= 0:
            raise ConfigError("localization.smoothing_alpha must be >= 0 and tile_size_m > 0")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    signal: SignalConfig = field(default_factory=SignalConfig)
    mcs_table: str | None = None  # path to an index,modulation_order,code_rate file
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    schedule: OneCycleConfig = field(default_factory=OneCycleConfig)
    optimizer: AdamWConfig = field(default_factory=AdamWConfig)
    environment: RadioEnvironment = field(default_factory=RadioEnvironment)
    link: LinkAdaptation = field(default_factory=LinkAdaptation)
    localization: LocalizationConfig = field(default_factory=LocalizationConfig)

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.network.n_classes != self.dataset.n_classes:
            raise ConfigError(f"network.n_classes={self.network.n_classes} but the dataset has "
                              f"{self.dataset.n_classes} MCS classes")
        table = self.table()
        for m in self.dataset.mcs_values:
            if m not in {e.index for e in table}:
                raise ConfigError(f"dataset MCS {m} is not defined by the MCS table")

    def table(self) -> McsTable:
        if self.mcs_table is None:
            return McsTable.default()
        try:
            return McsTable.from_file(self.mcs_table)
        except OSError as exc:
            raise ConfigError(f"cannot read MCS table {self.mcs_table}: {exc}") from None

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if hasattr(v, "__dataclass_fields__"):
                v = json.loads(json.dumps(asdict(v)))  # tuples -> lists
            d[f.name] = v
        # schedule.total_steps is derived from epochs and the training-set size
        d["schedule"].pop("total_steps", None)
        # sub-seeds are derived from the master seed
        for sec in ("environment", "signal", "train"):
            d[sec].pop("seed", None)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_SECTIONS = {
    "dataset": DatasetSpec, "signal": SignalConfig, "network": NetworkConfig, "train": TrainConfig,
    "schedule": OneCycleConfig, "optimizer": AdamWConfig, "environment": RadioEnvironment,
    "link": LinkAdaptation, "localization": LocalizationConfig,
}


def default_config_dict() -> dict:
    return ExperimentConfig().to_dict()


def _merge(base: dict, override: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in out:
            raise ConfigError(f"unknown config key {where}{k}")
        if isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = _merge(out[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def config_from_dict(d: dict) -> ExperimentConfig:
    merged = _merge(default_config_dict(), d, "")
    net_override = d.get("network", {})
    if "n_blocks" in net_override and "dilations" not in net_override:
        merged["network"]["dilations"] = None  # re-derive 2, 4, ... for the new depth
    try:
        sections = {}
        for name, cls in _SECTIONS.items():
            sections[name] = cls(**merged[name])
        return ExperimentConfig(seed=int(merged["seed"]), mcs_table=merged["mcs_table"], **sections)
    except TypeError as exc:
        raise ConfigError(f"invalid config value ({exc})") from None


def load_config(path: str | Path | None = None, seed: int | None = None) -> ExperimentConfig:
    d: dict = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    if seed is not None:
        d = {**d, "seed": seed}
    return config_from_dict(d)
