"""On-the-fly batch construction from the scene generator.

Each training step owns an independent RNG derived from (run seed, step), so a
resumed run draws exactly the batches the uninterrupted run would have drawn.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from ..evalmetrics import FrameDetections, detections_from_prediction
from ..motionrep import (
    MotionField,
    MotionKind,
    MotionStats,
    apply_negative,
    compute_motion_stats,
    motion_field_from_sample,
    normalize_motion,
)
from ..synthscene import DatasetMix, SceneSample, generate_from_mix
from .augment import augment
from .config import TrainConfig

TARGET_MOVING = "moving"
TARGET_MOVABLE = "movable"


@dataclass
class Batch:
    rgb: torch.Tensor  # (B, 3, H, W) in [-1, 1]
    motion: torch.Tensor  # (B, C, H, W) normalized
    target_masks: List[torch.Tensor]  # per image (N_t, H, W) float 0/1
    negatives: List[bool]  # True where the motion input was blanked
    samples: List[SceneSample]


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, step)))


def step_torch_generator(seed: int, step: int) -> torch.Generator:
    entropy = int(np.random.SeedSequence((seed, step, 0x706F696E)).generate_state(1)[0])
    g = torch.Generator()
    g.manual_seed(entropy)
    return g


def target_ids(sample: SceneSample, target: str) -> List[int]:
    if target == TARGET_MOVING:
        return sample.moving_ids()
    if target == TARGET_MOVABLE:
        return sample.movable_ids()
    raise ValueError(f"unknown target kind: {target}")


def masks_for_ids(sample: SceneSample, ids: Sequence[int]) -> torch.Tensor:
    if not ids:
        return torch.zeros(0, sample.height, sample.width)
    stack = np.stack([sample.instance_masks == i for i in ids])
    return torch.from_numpy(stack.astype(np.float32))


def rgb_tensor(sample: SceneSample) -> torch.Tensor:
    """First frame, channels-first, shifted to [-1, 1]."""
    img = sample.frames[0].transpose(2, 0, 1)
    return torch.from_numpy((img - 0.5) / 0.5).float()


def build_stats(
    mix: DatasetMix,
    kind: MotionKind,
    n_samples: int = 64,
    seed: int = 0,
    embedding_channels: int = 28,
) -> MotionStats:
    """Normalization statistics from a fresh draw of the training mix."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x73746174)))
    fields = []
    for _ in range(n_samples):
        _, sample = generate_from_mix(mix, rng)
        fields.append(
            motion_field_from_sample(sample, kind, embedding_channels=embedding_channels)
        )
    return compute_motion_stats(fields)


def sample_to_element(
    sample: SceneSample,
    kind: MotionKind,
    stats: MotionStats,
    target: str,
    p_neg: float,
    rng: np.random.Generator,
    embedding_channels: int = 28,
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor, bool]:
    """One sample -> (rgb, motion, target masks, negative flag)."""
    ids = target_ids(sample, target)
    field = motion_field_from_sample(
        sample, kind, value_range=stats.value_range, embedding_channels=embedding_channels
    )
    field, ids, applied = apply_negative(field, ids, p_neg, rng)
    data = normalize_motion(field, stats).transpose(2, 0, 1)
    return (
        rgb_tensor(sample),
        torch.from_numpy(np.ascontiguousarray(data)).float(),
        masks_for_ids(sample, ids),
        applied,
    )


def make_batch(
    cfg: TrainConfig,
    kind: MotionKind,
    stats: MotionStats,
    target: str,
    step: int,
    embedding_channels: int = 28,
    augment_samples: bool = True,
) -> Batch:
    rng = step_rng(cfg.seed, step)
    rgbs, motions, masks, negatives, samples = [], [], [], [], []
    for _ in range(cfg.batch_size):
        _, sample = generate_from_mix(cfg.mix, rng)
        if augment_samples:
            sample = augment(sample, rng, cfg.scale_range, cfg.flip_prob)
        rgb, motion, m, neg = sample_to_element(
            sample, kind, stats, target, cfg.p_neg, rng, embedding_channels
        )
        rgbs.append(rgb)
        motions.append(motion)
        masks.append(m)
        negatives.append(neg)
        samples.append(sample)
    return Batch(
        rgb=torch.stack(rgbs),
        motion=torch.stack(motions),
        target_masks=masks,
        negatives=negatives,
        samples=samples,
    )


def evaluation_frames(
    model,
    samples: Sequence[SceneSample],
    kind: Optional[MotionKind],
    stats: Optional[MotionStats],
    batch_size: int = 8,
    isolate_streams: bool = False,
    embedding_channels: int = 28,
) -> List[FrameDetections]:
    """Run the model over samples and pair detections with moving-object GT."""
    model.eval()
    needs = model.stream_names
    frames = []
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = list(samples[start : start + batch_size])
            kwargs = {}
            if "rgb" in needs:
                kwargs["rgb"] = torch.stack([rgb_tensor(s) for s in chunk])
            if "motion" in needs:
                fields = [
                    normalize_motion(
                        motion_field_from_sample(
                            s, kind, value_range=stats.value_range,
                            embedding_channels=embedding_channels,
                        ),
                        stats,
                    ).transpose(2, 0, 1)
                    for s in chunk
                ]
                kwargs["motion"] = torch.stack(
                    [torch.from_numpy(np.ascontiguousarray(f)).float() for f in fields]
                )
            prediction = model(isolate_streams=isolate_streams, **kwargs)[-1]
            size = (chunk[0].height, chunk[0].width)
            dets = detections_from_prediction(prediction, size, model.cfg.mask_threshold)
            for s, d in zip(chunk, dets):
                gts = [(s.instance_masks == i) for i in s.moving_ids()]
                frames.append(FrameDetections(predictions=d, ground_truth=gts))
    return frames
