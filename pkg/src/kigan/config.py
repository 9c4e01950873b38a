from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

POOLING_METHODS = ("vap", "social", "hidden")


def _from_dict(cls, d, nested=None):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    for key, sub in (nested or {}).items():
        if key in d and isinstance(d[key], dict):
            d[key] = sub.from_dict(d[key])
    try:
        return cls(**d).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


@dataclass
class ModelConfig:
    """Generator and discriminator sizes plus ablation switches.

    Feature scales divide raw SI inputs before the first layer so that
    pre-activations stay O(1); the decoder multiplies its output by
    ``disp_scale``.
    """

    d_h: int = 32
    d_attr: int = 8
    d_size: int = 8
    d_traffic: int = 8
    d_embed: int = 16
    d_rel: int = 16
    d_pool: int = 32
    d_z: int = 8
    d_dec: int = 32
    d_disc: int = 32
    attn_hidden: int = 32
    pool_hidden: int = 64
    disc_hidden: int = 64
    n_classes: int = 7
    n_codes: int = 5
    pooling: str = "vap"
    attention: str = "channel"
    attend_to: str = "neighbor"
    traffic_mode: str = "final"
    traj_input: str = "displacement"
    social_cell: float = 2.0
    social_grid: int = 8
    mask_motion: bool = False
    mask_physical: bool = False
    mask_traffic: bool = False
    disp_scale: float = 1.0
    vel_scale: float = 3.0
    acc_scale: float = 1.0
    size_scale: float = 5.0
    rel_scale: float = 20.0

    def validate(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type == "int" and v < 1:
                raise ConfigError(f"{f.name} must be >= 1, got {v}")
            if f.type == "float" and not v > 0:
                raise ConfigError(f"{f.name} must be positive, got {v}")
        choices = {
            "pooling": POOLING_METHODS,
            "attention": ("channel", "scalar"),
            "attend_to": ("neighbor", "self"),
            "traffic_mode": ("final", "mean"),
            "traj_input": ("displacement", "position"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        return self

    @property
    def phy_width(self):
        return self.d_attr + self.d_size

    @property
    def combined_width(self):
        return 2 * self.d_h + self.phy_width

    @property
    def recombined_width(self):
        return self.d_pool + self.combined_width + self.d_traffic

    def architecture(self):
        """Fields that determine parameter shapes (masks excluded)."""
        d = asdict(self)
        for key in ("mask_motion", "mask_physical", "mask_traffic"):
            d.pop(key)
        return d

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d)


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 50
    lr_g: float = 1e-3
    lr_d: float = 5e-4
    k: int = 12
    obs_len: int = 12
    pred_len: int = 12
    seed: int = 0
    variety_weight: float = 1.0
    adversarial_weight: float = 1.0
    eval_k: int = 12
    eval_seed: int = 1234
    eval_every: int = 1
    stride: int = 12
    resample_step: int = 15
    include_pedestrians: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self):
        for key in ("batch_size", "epochs", "k", "obs_len", "pred_len", "eval_k", "eval_every", "stride", "resample_step"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        for key in ("lr_g", "lr_d"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive")
        if self.variety_weight < 0 or self.adversarial_weight < 0:
            raise ConfigError("loss weights must be non-negative")
        if not isinstance(self.model, ModelConfig):
            raise ConfigError("model must be a ModelConfig")
        self.model.validate()
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d, nested={"model": ModelConfig})

    @classmethod
    def load(cls, path):
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(raw)
