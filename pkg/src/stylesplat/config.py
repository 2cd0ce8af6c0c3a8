"""Training configuration with JSON overrides."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass


@dataclass
class Phase1Config:
    iterations: int = 3000
    feature_lr: float = 0.0025
    position_lr: float = 1.6e-4          # multiplied by the scene extent
    position_lr_final: float = 1.6e-6    # exponential decay target, also extent-scaled
    opacity_lr: float = 0.05
    scale_lr: float = 5e-3
    rotation_lr: float = 1e-3
    prune_interval: int = 500
    prune_opacity_threshold: float = 0.005
    densify_enabled: bool = False
    densify_interval: int = 500
    densify_grad_threshold: float = 2e-4
    densify_until: int = 2000
    grad_clip: float = 10.0
    sh_degree: int = 2


@dataclass
class Phase2Config:
    iterations: int = 600
    appearance_lr: float = 0.025
    appearance_lr_final: float = 0.0025
    disc_lr: float = 2e-4
    weight_style: float = 1.0
    weight_adv: float = 1.0
    weight_content: float = 1.0
    weight_depth: float = 1.0
    use_style: bool = True
    use_adv: bool = True
    use_content: bool = True
    use_depth: bool = True
    render_scale: float = 0.5
    grad_clip: float = 10.0
    pool_size: int = 10
    log_wall_clock: bool = False


@dataclass
class DepthNetConfig:
    steps: int = 600
    lr: float = 1e-3
    batch_size: int = 4
    render_scale: float = 0.5
    color_jitter: float = 0.5          # strength of random global color maps during training


@dataclass
class TrainConfig:
    phase1: Phase1Config = field(default_factory=Phase1Config)
    phase2: Phase2Config = field(default_factory=Phase2Config)
    depthnet: DepthNetConfig = field(default_factory=DepthNetConfig)
    seed: int = 0
    checkpoint_interval: int = 0

    def validate(self):
        for group in (self.phase1, self.phase2):
            for f in fields(group):
                value = getattr(group, f.name)
                if f.name.endswith("lr") and value <= 0:
                    raise ValueError(f"{f.name} must be positive, got {value}")
                if f.name == "iterations" and value <= 0:
                    raise ValueError("iterations must be positive")
        for name in ("weight_style", "weight_adv", "weight_content", "weight_depth"):
            if getattr(self.phase2, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        return self

    def to_dict(self):
        return asdict(self)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def loss_weights(self):
        from .losses import LossWeights
        p = self.phase2
        return LossWeights(p.weight_style, p.weight_adv, p.weight_content, p.weight_depth,
                           p.use_style, p.use_adv, p.use_content, p.use_depth)


def _merge(obj, overrides, path=""):
    known = {f.name: f for f in fields(obj)}
    for key, value in overrides.items():
        if key not in known:
            raise KeyError(f"unknown config key {path}{key}")
        current = getattr(obj, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise TypeError(f"config section {path}{key} must be an object")
            _merge(current, value, f"{path}{key}.")
        else:
            if isinstance(current, bool):
                value = bool(value)
            elif isinstance(current, int) and not isinstance(value, bool):
                value = int(value)
            elif isinstance(current, float):
                value = float(value)
            setattr(obj, key, value)
    return obj


def config_from_dict(data: dict) -> TrainConfig:
    return _merge(TrainConfig(), data).validate()


def load_config(path) -> TrainConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))
