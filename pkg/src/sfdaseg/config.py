"""Run configuration: adaptation hyperparameters, model spec and the
config-file schema used by the CLI. Defaults reproduce the reference
training settings; unknown keys in a config file are rejected.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, asdict, replace
from pathlib import Path
from typing import Any

import yaml

from .data.augment import AugmentParams
from .data.synthetic import ShiftConfig, hard_shift, source_shift, target_shift
from .errors import ConfigError


@dataclass
class AdaptConfig:
    """Every hyperparameter of source training and two-stage adaptation."""

    conf_thresh: float = 0.75         # pseudo-label confidence threshold
    uncert_thresh: float = 0.05       # MC std threshold for prototype support
    mc_passes: int = 10               # stochastic passes per teacher inference
    unreliable_ratio: float = 0.10    # fraction routed to the unreliable set
    ema_decay: float = 0.99           # teacher EMA smoothing
    source_epochs: int = 200
    stage_epochs: tuple[int, int] = (10, 10)
    lr_source: float = 1e-3
    lr_adapt: float = 5e-4
    lr_poly_power: float = 0.9        # poly decay of lr_adapt within each stage; 0 = constant
    batch_size: int = 8
    seed: int = 0
    mix_ratio_range: tuple[float, float] = (0.15, 0.35)  # pasted-patch area fraction
    optimizer: str = "adam"
    holdout_frac: float = 0.1         # source holdout used to pick the best epoch
    background_weight: str = "prob"   # prototype weight for the background class:
                                      # "prob" (as defined) or "complement" (1 - p)
    stage2_keep_intra: bool = False   # add the intra objective during stage 2
    use_denoise: bool = True          # prototype-filter the pseudo-labels
    augment: AugmentParams = field(default_factory=AugmentParams)

    def validate(self) -> None:
        if not (0.0 < self.conf_thresh < 1.0):
            raise ConfigError(f"conf_thresh must be in (0, 1), got {self.conf_thresh}")
        if self.uncert_thresh <= 0.0:
            raise ConfigError(f"uncert_thresh must be > 0, got {self.uncert_thresh}")
        if self.mc_passes < 2:
            raise ConfigError(f"mc_passes must be >= 2, got {self.mc_passes}")
        if not (0.0 < self.unreliable_ratio < 1.0):
            raise ConfigError(f"unreliable_ratio must be in (0, 1), got {self.unreliable_ratio}")
        if not (0.0 <= self.ema_decay <= 1.0):
            raise ConfigError(f"ema_decay must be in [0, 1], got {self.ema_decay}")
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")
        if self.background_weight not in ("prob", "complement"):
            raise ConfigError(f"background_weight must be 'prob' or 'complement'")
        lo, hi = self.mix_ratio_range
        if not (0.0 < lo <= hi < 1.0):
            raise ConfigError(f"mix_ratio_range must satisfy 0 < lo <= hi < 1, got {self.mix_ratio_range}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_poly_power < 0.0:
            raise ConfigError(f"lr_poly_power must be >= 0, got {self.lr_poly_power}")


@dataclass
class ModelSpec:
    backbone: str = "compact_unet"
    in_channels: int = 3
    out_channels: int = 2
    base_channels: int = 16
    dropout: float = 0.15

    def build_kwargs(self) -> dict:
        kw = {"in_channels": self.in_channels, "out_channels": self.out_channels, "dropout": self.dropout}
        if self.backbone == "compact_unet":
            kw["base_channels"] = self.base_channels
        return kw


@dataclass
class SyntheticDataConfig:
    n_train: int = 200
    n_test: int = 50
    source_shift: ShiftConfig = field(default_factory=source_shift)
    target_shift: ShiftConfig = field(default_factory=target_shift)
    hard_shift: ShiftConfig = field(default_factory=hard_shift)
    hard_fraction: float = 0.10
    bridge_fraction: float = 0.05    # band rendered halfway to hard_shift,
                                     # just before the degraded tail
    seed: int = 7


@dataclass
class BenchmarkDataConfig:
    root: str = ""
    layout: str = ""
    crop_size: int = 512


@dataclass
class DataConfig:
    kind: str = "synthetic"           # "synthetic" | "benchmark"
    resolution: tuple[int, int] = (64, 64)
    synthetic: SyntheticDataConfig = field(default_factory=SyntheticDataConfig)
    benchmark: BenchmarkDataConfig = field(default_factory=BenchmarkDataConfig)

    def validate(self) -> None:
        if self.kind not in ("synthetic", "benchmark"):
            raise ConfigError(f"data.kind must be 'synthetic' or 'benchmark', got {self.kind!r}")
        if self.kind == "benchmark":
            if not self.benchmark.root:
                raise ConfigError("missing required field: data.benchmark.root")
            if not self.benchmark.layout:
                raise ConfigError("missing required field: data.benchmark.layout")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelSpec = field(default_factory=ModelSpec)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    output: str = ""

    def validate(self) -> None:
        self.data.validate()
        self.adapt.validate()


_NESTED_TYPES = {
    "AdaptConfig": AdaptConfig,
    "ModelSpec": ModelSpec,
    "DataConfig": DataConfig,
    "SyntheticDataConfig": SyntheticDataConfig,
    "BenchmarkDataConfig": BenchmarkDataConfig,
    "ShiftConfig": ShiftConfig,
    "AugmentParams": AugmentParams,
}


def _nested_type(ftype) -> type | None:
    name = ftype if isinstance(ftype, str) else getattr(ftype, "__name__", "")
    return _NESTED_TYPES.get(name)


def _from_mapping(cls, mapping: dict, path: str):
    if not isinstance(mapping, dict):
        raise ConfigError(f"section {path or cls.__name__} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(mapping) - set(known)
    if unknown:
        raise ConfigError(f"unknown config key(s) under {path or 'top level'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in mapping.items():
        sub = f"{path}.{name}" if path else name
        nested = _nested_type(known[name].type)
        if nested is not None:
            kwargs[name] = _from_mapping(nested, value, sub)
        elif isinstance(value, list):
            kwargs[name] = tuple(value)  # yaml lists map to tuple-typed fields
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config section {path}: {exc}") from exc


def run_config_from_dict(doc: dict) -> RunConfig:
    cfg = _from_mapping(RunConfig, doc or {}, "")
    cfg.validate()
    return cfg


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc
    if doc is None:
        doc = {}
    return run_config_from_dict(doc)


def config_to_dict(cfg) -> dict:
    return asdict(cfg)


def with_overrides(cfg: RunConfig, seed: int | None = None, sigma: float | None = None,
                   output: str | None = None, stage2_keep_intra: bool | None = None) -> RunConfig:
    adapt = cfg.adapt
    if seed is not None:
        adapt = replace(adapt, seed=seed)
    if sigma is not None:
        adapt = replace(adapt, unreliable_ratio=sigma)
    if stage2_keep_intra is not None:
        adapt = replace(adapt, stage2_keep_intra=stage2_keep_intra)
    out = replace(cfg, adapt=adapt)
    if output is not None:
        out = replace(out, output=output)
    out.validate()
    return out
