"""Training configuration and the two phase presets."""

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

from ..synthscene import DatasetMix, GeneratorConfig


def default_mix() -> DatasetMix:
    return DatasetMix(sources=((GeneratorConfig(), 1.0),))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 0.05
    backbone_lr_mult: float = 0.1
    clip_norm: float = 0.1
    epochs: int = 10
    lr_drop_epoch: int = 8
    samples_per_epoch: int = 500
    batch_size: int = 8
    p_neg: float = 0.0
    seed: int = 0
    flip_prob: float = 0.5
    scale_range: Tuple[float, float] = (1.0, 1.3)
    mix: DatasetMix = field(default_factory=default_mix)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not 0.0 <= self.p_neg <= 1.0:
            raise ValueError("p_neg must be in [0, 1]")
        if self.epochs < 1 or self.samples_per_epoch < 1 or self.batch_size < 1:
            raise ValueError("epochs, samples_per_epoch and batch_size must be >= 1")
        if self.lr_drop_epoch < 0:
            raise ValueError("lr_drop_epoch must be >= 0")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be > 0")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must be in [0, 1]")
        lo, hi = self.scale_range
        if not 1.0 <= lo <= hi:
            raise ValueError("scale_range must satisfy 1 <= low <= high")

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(self.samples_per_epoch / self.batch_size)

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    def lr_at_epoch(self, epoch: int) -> float:
        return self.lr * (0.1 if epoch >= self.lr_drop_epoch else 1.0)

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "backbone_lr_mult": self.backbone_lr_mult,
            "clip_norm": self.clip_norm,
            "epochs": self.epochs,
            "lr_drop_epoch": self.lr_drop_epoch,
            "samples_per_epoch": self.samples_per_epoch,
            "batch_size": self.batch_size,
            "p_neg": self.p_neg,
            "seed": self.seed,
            "flip_prob": self.flip_prob,
            "scale_range": list(self.scale_range),
            "mix": self.mix.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        data = dict(d)
        data["scale_range"] = tuple(data.get("scale_range", (1.0, 1.3)))
        data["mix"] = DatasetMix.from_dict(data["mix"])
        return TrainConfig(**data)


# Negative-example rates: 0.3 for small data mixes, 0.05 once the mix is
# large enough that regularization starts starving object discovery.
SMALL_MIX_P_NEG = 0.3
LARGE_MIX_P_NEG = 0.05


def pretrain_defaults(mix: Optional[DatasetMix] = None, **overrides) -> TrainConfig:
    """Single-modality phase: longer schedule, no negative examples."""
    base = TrainConfig(
        epochs=30, lr_drop_epoch=24, p_neg=0.0, mix=mix or default_mix()
    )
    return replace(base, **overrides) if overrides else base


def finetune_defaults(mix: Optional[DatasetMix] = None, **overrides) -> TrainConfig:
    """Fusion phase: short schedule, negative examples on."""
    base = TrainConfig(
        epochs=10, lr_drop_epoch=8, p_neg=SMALL_MIX_P_NEG, mix=mix or default_mix()
    )
    return replace(base, **overrides) if overrides else base
