"""Joint geometric augmentation for rendered samples.

Every transform keeps images, flow, depth, scene flow, instance masks and the
validity map consistent: a flip negates the horizontal flow component, a
resize rescales pixel displacements by the same factor.
"""

from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from ..synthscene import SceneSample

MIN_CROP = 32


def _surviving_labels(sample: SceneSample, masks: np.ndarray) -> tuple:
    ids = {int(i) for i in np.unique(masks) if i != 0}
    motion = {i: sample.motion_labels[i] for i in ids if i in sample.motion_labels}
    movable = {i: sample.movable_labels[i] for i in ids if i in sample.movable_labels}
    return motion, movable


def flip_sample(sample: SceneSample) -> SceneSample:
    """Mirror about the vertical axis; x-components change sign."""
    flow = sample.flow[:, ::-1].copy()
    flow[..., 0] *= -1.0
    scene_flow = sample.scene_flow[:, ::-1].copy()
    # mirror-conjugated rigid motion: (wx, -wy, -wz, -tx, ty, tz)
    scene_flow[..., 1] *= -1.0
    scene_flow[..., 2] *= -1.0
    scene_flow[..., 3] *= -1.0
    return SceneSample(
        frames=sample.frames[:, :, ::-1].copy(),
        flow=flow,
        depth=sample.depth[:, :, ::-1].copy(),
        scene_flow=scene_flow,
        instance_masks=sample.instance_masks[:, ::-1].copy(),
        motion_labels=dict(sample.motion_labels),
        movable_labels=dict(sample.movable_labels),
        degeneracy_tags=sample.degeneracy_tags,
        flow_valid=sample.flow_valid[:, ::-1].copy(),
    )


def crop_sample(sample: SceneSample, top: int, left: int, height: int, width: int) -> SceneSample:
    if height < MIN_CROP or width < MIN_CROP:
        raise ValueError(f"crop must be at least {MIN_CROP}x{MIN_CROP}")
    if top < 0 or left < 0 or top + height > sample.height or left + width > sample.width:
        raise ValueError("crop window out of bounds")
    rows = slice(top, top + height)
    cols = slice(left, left + width)
    masks = sample.instance_masks[rows, cols].copy()
    motion, movable = _surviving_labels(sample, masks)
    return SceneSample(
        frames=sample.frames[:, rows, cols].copy(),
        flow=sample.flow[rows, cols].copy(),
        depth=sample.depth[:, rows, cols].copy(),
        scene_flow=sample.scene_flow[rows, cols].copy(),
        instance_masks=masks,
        motion_labels=motion,
        movable_labels=movable,
        degeneracy_tags=sample.degeneracy_tags,
        flow_valid=sample.flow_valid[rows, cols].copy(),
    )


def _resize(array: np.ndarray, size: Tuple[int, int], mode: str) -> np.ndarray:
    """Resize (C, H, W) data; nearest keeps label/ground-truth values pure."""
    x = torch.from_numpy(np.ascontiguousarray(array))[None].float()
    if mode == "bilinear":
        out = F.interpolate(x, size=size, mode="bilinear", align_corners=False)
    else:
        out = F.interpolate(x, size=size, mode="nearest")
    return out[0].numpy()


def scale_sample(sample: SceneSample, s: float) -> SceneSample:
    """Resize by factor s; optical flow values scale with the resolution."""
    if not s > 0:
        raise ValueError("scale factor must be > 0")
    h = int(round(sample.height * s))
    w = int(round(sample.width * s))
    if h < MIN_CROP or w < MIN_CROP:
        raise ValueError("scaled sample would fall below the minimum size")
    sy, sx = h / sample.height, w / sample.width

    frames = np.stack(
        [
            _resize(f.transpose(2, 0, 1), (h, w), "bilinear").transpose(1, 2, 0)
            for f in sample.frames
        ]
    ).clip(0.0, 1.0).astype(np.float32)
    flow = _resize(sample.flow.transpose(2, 0, 1), (h, w), "nearest").transpose(1, 2, 0)
    flow = (flow * np.array([sx, sy], dtype=np.float32)).astype(np.float32)
    depth = _resize(sample.depth, (h, w), "nearest").astype(np.float32)
    scene_flow = (
        _resize(sample.scene_flow.transpose(2, 0, 1), (h, w), "nearest")
        .transpose(1, 2, 0)
        .astype(np.float32)
    )
    masks = (
        _resize(sample.instance_masks[None].astype(np.float32), (h, w), "nearest")[0]
        .astype(np.int32)
    )
    valid = _resize(sample.flow_valid[None].astype(np.float32), (h, w), "nearest")[0] > 0.5
    motion, movable = _surviving_labels(sample, masks)
    return SceneSample(
        frames=frames,
        flow=flow,
        depth=depth,
        scene_flow=scene_flow,
        instance_masks=masks,
        motion_labels=motion,
        movable_labels=movable,
        degeneracy_tags=sample.degeneracy_tags,
        flow_valid=valid,
    )


def augment(
    sample: SceneSample,
    rng: np.random.Generator,
    scale_range: Tuple[float, float] = (1.0, 1.3),
    flip_prob: float = 0.5,
    crop_size: Optional[Tuple[int, int]] = None,
) -> SceneSample:
    """Random scale up, crop back to a fixed size, and coin-flip mirror."""
    crop_h, crop_w = crop_size or (sample.height, sample.width)
    s = float(rng.uniform(*scale_range))
    out = scale_sample(sample, s) if s != 1.0 else sample
    if (out.height, out.width) != (crop_h, crop_w):
        top = int(rng.integers(0, out.height - crop_h + 1))
        left = int(rng.integers(0, out.width - crop_w + 1))
        out = crop_sample(out, top, left, crop_h, crop_w)
    if rng.random() < flip_prob:
        out = flip_sample(out)
    return out
