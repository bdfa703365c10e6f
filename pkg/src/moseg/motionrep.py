"""Motion-input encodings for the motion stream.

Supported encodings: raw optical flow (2ch), per-pixel rigid scene flow (6ch),
and a fixed sinusoidal lift of the flow (default 28ch). Also provides input
standardization, the random-constant negative augmentation, and scale-shift
alignment of relative depth against a reference.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

# Wave matrix seed for the sinusoidal lift; fixed so encodings are stable
# across processes and checkpoints.
_EMBEDDING_SEED = 2718
_EMBEDDING_SCALE = 0.35

STATS_FILENAME = "motion_stats.json"


class MotionKind(str, enum.Enum):
    OPTICAL_FLOW = "of"
    SCENE_FLOW = "sf"
    EMBEDDING = "emb"

    def channels(self, embedding_channels: int = 28) -> int:
        if self is MotionKind.OPTICAL_FLOW:
            return 2
        if self is MotionKind.SCENE_FLOW:
            return 6
        return embedding_channels


@dataclass(frozen=True)
class MotionField:
    kind: MotionKind
    data: np.ndarray  # (H, W, C) float32
    value_range: np.ndarray  # (C, 2) per-channel (min, max)

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        vr = np.asarray(self.value_range, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError("motion data must be (H, W, C)")
        c = data.shape[2]
        if self.kind is MotionKind.OPTICAL_FLOW and c != 2:
            raise ValueError("optical flow needs 2 channels")
        if self.kind is MotionKind.SCENE_FLOW and c != 6:
            raise ValueError("scene flow needs 6 channels")
        if self.kind is MotionKind.EMBEDDING and (c < 2 or c % 2):
            raise ValueError("embedding channel count must be even and >= 2")
        if vr.shape != (c, 2):
            raise ValueError("value_range must be (C, 2)")
        if (vr[:, 0] > vr[:, 1]).any():
            raise ValueError("value_range min must not exceed max")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "value_range", vr)

    @property
    def channels(self) -> int:
        return int(self.data.shape[2])


@dataclass(frozen=True)
class NegativeAugConfig:
    p_neg: float
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_neg <= 1.0:
            raise ValueError("p_neg must lie in [0, 1]")


def embedding_lift(flow: np.ndarray, channels: int = 28) -> np.ndarray:
    """Lift a 2-channel flow to a sinusoidal feature map with fixed waves."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError("flow must be (H, W, 2)")
    if channels < 2 or channels % 2:
        raise ValueError("channels must be even and >= 2")
    waves = np.random.default_rng(_EMBEDDING_SEED).normal(
        scale=_EMBEDDING_SCALE, size=(channels // 2, 2)
    )
    phase = flow @ waves.T
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=-1).astype(np.float32)


def _range_from_data(data: np.ndarray) -> np.ndarray:
    flat = data.reshape(-1, data.shape[-1]).astype(np.float64)
    return np.stack([flat.min(axis=0), flat.max(axis=0)], axis=1)


def motion_field_from_arrays(
    kind: MotionKind,
    flow: np.ndarray,
    scene_flow: Optional[np.ndarray] = None,
    value_range: Optional[np.ndarray] = None,
    embedding_channels: int = 28,
) -> MotionField:
    """Build the requested encoding from dense flow / scene-flow maps."""
    if kind is MotionKind.OPTICAL_FLOW:
        data = np.asarray(flow, dtype=np.float32)
    elif kind is MotionKind.SCENE_FLOW:
        if scene_flow is None:
            raise ValueError("scene flow encoding needs the scene_flow map")
        data = np.asarray(scene_flow, dtype=np.float32)
    else:
        data = embedding_lift(flow, embedding_channels)
    vr = _range_from_data(data) if value_range is None else value_range
    return MotionField(kind=kind, data=data, value_range=vr)


def motion_field_from_sample(
    sample,
    kind: MotionKind,
    value_range: Optional[np.ndarray] = None,
    embedding_channels: int = 28,
) -> MotionField:
    return motion_field_from_arrays(
        kind,
        sample.flow,
        scene_flow=sample.scene_flow,
        value_range=value_range,
        embedding_channels=embedding_channels,
    )


def apply_negative(
    field: MotionField,
    targets: Sequence,
    p_neg: float,
    rng: np.random.Generator,
) -> tuple:
    """Randomly blank the motion input: constant per-channel field, no targets."""
    if not 0.0 <= p_neg <= 1.0:
        raise ValueError("p_neg must lie in [0, 1]")
    if rng.random() >= p_neg:
        return field, list(targets), False
    lo, hi = field.value_range[:, 0], field.value_range[:, 1]
    constants = rng.uniform(lo, hi).astype(np.float32)
    data = np.broadcast_to(constants, field.data.shape).copy()
    negative = MotionField(kind=field.kind, data=data, value_range=field.value_range)
    return negative, [], True


@dataclass(frozen=True)
class MotionStats:
    mean: np.ndarray  # (C,)
    std: np.ndarray  # (C,)
    value_range: np.ndarray  # (C, 2)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        vr = np.asarray(self.value_range, dtype=np.float64)
        if std.shape != mean.shape or vr.shape != (mean.size, 2):
            raise ValueError("inconsistent stats shapes")
        if (std <= 0.0).any():
            raise ValueError("std must be positive per channel")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        object.__setattr__(self, "value_range", vr)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "value_range": self.value_range.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "MotionStats":
        return MotionStats(
            mean=np.array(d["mean"]),
            std=np.array(d["std"]),
            value_range=np.array(d["value_range"]),
        )


def compute_motion_stats(fields: Sequence[MotionField], std_floor: float = 1e-6) -> MotionStats:
    """Per-channel mean/std/range over a collection of same-kind fields."""
    if not fields:
        raise ValueError("need at least one field")
    kind = fields[0].kind
    if any(f.kind is not kind for f in fields):
        raise ValueError("fields must share one kind")
    stacked = np.concatenate([f.data.reshape(-1, f.channels) for f in fields], axis=0)
    stacked = stacked.astype(np.float64)
    return MotionStats(
        mean=stacked.mean(axis=0),
        std=np.maximum(stacked.std(axis=0), std_floor),
        value_range=np.stack([stacked.min(axis=0), stacked.max(axis=0)], axis=1),
    )


def normalize_motion(field: MotionField, stats: MotionStats) -> np.ndarray:
    if stats.mean.size != field.channels:
        raise ValueError("stats channel count does not match field")
    if (stats.std <= 0.0).any():
        raise ValueError("std must be positive per channel")
    out = (field.data.astype(np.float64) - stats.mean) / stats.std
    return out.astype(np.float32)


def denormalize_motion(data: np.ndarray, stats: MotionStats) -> np.ndarray:
    out = np.asarray(data, dtype=np.float64) * stats.std + stats.mean
    return out.astype(np.float32)


def write_motion_stats(dataset_dir, kind: MotionKind, stats: MotionStats) -> None:
    path = Path(dataset_dir) / STATS_FILENAME
    payload = {}
    if path.exists():
        with open(path) as f:
            payload = json.load(f)
    payload[kind.value] = stats.to_dict()
    with open(path, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)


def read_motion_stats(dataset_dir, kind: MotionKind) -> MotionStats:
    path = Path(dataset_dir) / STATS_FILENAME
    with open(path) as f:
        payload = json.load(f)
    if kind.value not in payload:
        raise KeyError(f"no stats recorded for kind '{kind.value}'")
    return MotionStats.from_dict(payload[kind.value])


def align_depth(
    pred: np.ndarray, ref: np.ndarray, valid: Optional[np.ndarray] = None
) -> tuple:
    """Least-squares scale/shift fit of pred onto ref over valid pixels."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError("pred and ref shapes differ")
    if valid is None:
        valid = np.ones(pred.shape, dtype=bool)
    p = pred[valid]
    r = ref[valid]
    if p.size < 2:
        raise ValueError("need at least 2 valid pixels")
    if np.ptp(p) == 0.0:
        raise ValueError("constant prediction over valid set is rank deficient")
    # Normal equations for argmin_{s,t} sum (s*p + t - r)^2.
    a = np.array([[np.dot(p, p), p.sum()], [p.sum(), float(p.size)]])
    b = np.array([np.dot(p, r), r.sum()])
    s, t = np.linalg.solve(a, b)
    return float(s), float(t), (s * pred + t)
