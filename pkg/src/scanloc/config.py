"""Run configuration: one nested structure covering every tunable.

Configs load from JSON; unknown keys are rejected by name so typos cannot
silently fall back to defaults.  `reference_page` renders the full default
tree as the single documentation source for available settings.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, fields

from .core import LidarParams
from .field import EncodingConfig
from .mcl import FilterConfig, ObservationConfig
from .motion import MotionNoise
from .train import TrainConfig


@dataclass
class LidarSection:
    num_beams: int = 181
    angle_min: float = -0.75 * math.pi
    angle_max: float = 0.75 * math.pi
    range_min: float = 0.05
    range_max: float = 30.0

    def build(self) -> LidarParams:
        return LidarParams(self.num_beams, self.angle_min, self.angle_max,
                           self.range_min, self.range_max)


@dataclass
class ModelSection:
    num_frequencies: int = 10
    include_input: bool = True
    hidden_width: int = 256
    num_hidden_layers: int = 8

    def encoding(self) -> EncodingConfig:
        return EncodingConfig(self.num_frequencies, self.include_input)


@dataclass
class TrainSection:
    batch_size: int = 1024
    epochs: int = 32
    learning_rate: float = 1e-4
    lr_decay_epochs: list[int] = field(default_factory=lambda: [4, 8])
    lr_decay_factor: float = 0.5
    weight_decay: float = 0.001
    lambda_reg: float = 1e-5
    samples_per_ray: int = 256
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    val_fraction: float = 0.1

    def build(self, seed: int) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs,
            learning_rate=self.learning_rate,
            lr_decay_epochs=tuple(self.lr_decay_epochs),
            lr_decay_factor=self.lr_decay_factor,
            weight_decay=self.weight_decay, lambda_reg=self.lambda_reg,
            samples_per_ray=self.samples_per_ray, adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2, adam_eps=self.adam_eps,
            rng_seed=seed, val_fraction=self.val_fraction)


@dataclass
class SamplingSection:
    num_samples: int = 256


@dataclass
class NogSection:
    resolution: float = 0.05
    bounds_margin: float = 0.5      # padding around map bounds when deriving


@dataclass
class FilterSection:
    init_particles: int = 100_000
    tracking_particles: int = 5_000
    convergence_spread: float = 0.5
    resample_ess_fraction: float = 0.5

    def build(self, map_bounds, seed: int) -> FilterConfig:
        return FilterConfig(
            map_bounds=map_bounds, init_particles=self.init_particles,
            tracking_particles=self.tracking_particles,
            convergence_spread=self.convergence_spread,
            resample_ess_fraction=self.resample_ess_fraction, rng_seed=seed)


@dataclass
class ObservationSection:
    sigma: float = 0.25
    beam_subsample: int | None = None

    def build(self) -> ObservationConfig:
        return ObservationConfig(self.sigma, self.beam_subsample)


@dataclass
class MotionSection:
    alpha1: float = 0.1
    alpha2: float = 0.1
    alpha3: float = 0.05
    alpha4: float = 0.05

    def build(self) -> MotionNoise:
        return MotionNoise(self.alpha1, self.alpha2, self.alpha3, self.alpha4)


@dataclass
class EvalSection:
    init_window: float = 20.0
    pairing_max_gap: float = 0.1
    scan_threshold: float = 0.5


@dataclass
class RunConfig:
    lidar: LidarSection = field(default_factory=LidarSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    nog: NogSection = field(default_factory=NogSection)
    filter: FilterSection = field(default_factory=FilterSection)
    observation: ObservationSection = field(default_factory=ObservationSection)
    motion: MotionSection = field(default_factory=MotionSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seed: int = 0


def _from_dict(cls, data: dict, path: str):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ValueError(f"unknown config key {path + key!r}")
        ftype = known[key].type
        if isinstance(value, dict):
            nested = _section_class(cls, key)
            if nested is None:
                raise ValueError(f"config key {path + key!r} does not take a table")
            kwargs[key] = _from_dict(nested, value, path + key + ".")
        else:
            kwargs[key] = value
        del ftype
    return cls(**kwargs)


def _section_class(cls, name: str):
    f = next(f for f in fields(cls) if f.name == name)
    default = f.default_factory if f.default_factory is not dataclasses.MISSING \
        else None
    if default is not None:
        candidate = default()
        if dataclasses.is_dataclass(candidate):
            return type(candidate)
    return None


def load_config(path: str | None) -> RunConfig:
    """RunConfig from a JSON file; None gives all defaults."""
    if path is None:
        return RunConfig()
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config root must be an object")
    return _from_dict(RunConfig, data, "")


def reference_page() -> str:
    """All settings with their defaults, one generated page."""
    lines = ["scanloc configuration reference (JSON)", ""]
    cfg = RunConfig()
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            lines.append(f"[{f.name}]")
            for sub in fields(value):
                lines.append(f"  {sub.name} = {getattr(value, sub.name)!r}")
            lines.append("")
        else:
            lines.append(f"{f.name} = {value!r}")
    return "\n".join(lines) + "\n"
