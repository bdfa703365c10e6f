"""On-disk sample and dataset formats.

Per-sample directory layout:
    frame_1.png / frame_2.png   8-bit RGB
    flow.flo                    Middlebury flow (magic, W, H, H*W*2 float32)
    depth.raw                   uint32 (H, W) header + 2*H*W float32
    scene_flow.raw              uint32 (H, W) header + 6*H*W float32
    masks.png                   16-bit single-channel instance ids
    labels.json                 motion/movable labels, tags, flow validity

A dataset directory holds sample_%06d/ subdirectories plus manifest.json.
"""

from __future__ import annotations

import json
import shutil
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .. import rle
from .types import DEGENERACY_TAGS, SceneSample

FLO_MAGIC = 202021.25


def write_flo(path, flow: np.ndarray) -> None:
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError("flow must be (H, W, 2)")
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(struct.pack("<f", FLO_MAGIC))
        f.write(struct.pack("<ii", w, h))
        f.write(flow.astype("<f4").tobytes())


def read_flo(path) -> np.ndarray:
    with open(path, "rb") as f:
        (magic,) = struct.unpack("<f", f.read(4))
        if abs(magic - FLO_MAGIC) > 1e-3:
            raise ValueError(f"bad flow file magic: {magic}")
        w, h = struct.unpack("<ii", f.read(8))
        data = np.frombuffer(f.read(h * w * 2 * 4), dtype="<f4")
    if data.size != h * w * 2:
        raise ValueError("truncated flow file")
    return data.reshape(h, w, 2).copy()


def write_planes_raw(path, planes: np.ndarray) -> None:
    """Write a (C, H, W) float32 stack with a uint32 (H, W) header."""
    planes = np.asarray(planes, dtype=np.float32)
    if planes.ndim != 3:
        raise ValueError("expected (C, H, W)")
    _, h, w = planes.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<II", h, w))
        f.write(planes.astype("<f4").tobytes())


def read_planes_raw(path, channels: int) -> np.ndarray:
    with open(path, "rb") as f:
        h, w = struct.unpack("<II", f.read(8))
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != channels * h * w:
        raise ValueError(f"expected {channels} planes of {h}x{w}")
    return data.reshape(channels, h, w).copy()


def _write_frame_png(path, frame: np.ndarray) -> None:
    arr = np.clip(np.asarray(frame, dtype=np.float64) * 255.0 + 0.5, 0, 255)
    Image.fromarray(arr.astype(np.uint8), mode="RGB").save(path)


def _read_frame_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32)
    return arr / 255.0


def _write_masks_png(path, masks: np.ndarray) -> None:
    arr = np.asarray(masks)
    if arr.min() < 0 or arr.max() > 0xFFFF:
        raise ValueError("instance ids must fit in 16 bits")
    Image.fromarray(arr.astype(np.uint16)).save(path)


def _read_masks_png(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.int32)


def write_sample(sample_dir, sample: SceneSample) -> None:
    sample.validate()
    d = Path(sample_dir)
    d.mkdir(parents=True, exist_ok=True)
    _write_frame_png(d / "frame_1.png", sample.frames[0])
    _write_frame_png(d / "frame_2.png", sample.frames[1])
    write_flo(d / "flow.flo", sample.flow)
    write_planes_raw(d / "depth.raw", sample.depth)
    write_planes_raw(d / "scene_flow.raw", np.moveaxis(sample.scene_flow, -1, 0))
    _write_masks_png(d / "masks.png", sample.instance_masks)
    if isinstance(sample.flow_valid, np.ndarray):
        valid = None if sample.flow_valid.all() else rle.encode_mask(sample.flow_valid)
    else:
        valid = None if sample.flow_valid else rle.encode_mask(
            np.zeros(sample.flow.shape[:2], dtype=bool)
        )
    labels = {
        "motion_labels": {str(k): v for k, v in sample.motion_labels.items()},
        "movable_labels": {str(k): v for k, v in sample.movable_labels.items()},
        "degeneracy_tags": list(sample.degeneracy_tags),
        "flow_valid": valid,
    }
    with open(d / "labels.json", "w") as f:
        json.dump(labels, f, indent=1, sort_keys=True)


def read_sample(sample_dir) -> SceneSample:
    d = Path(sample_dir)
    frames = np.stack([_read_frame_png(d / "frame_1.png"), _read_frame_png(d / "frame_2.png")])
    flow = read_flo(d / "flow.flo")
    depth = read_planes_raw(d / "depth.raw", 2)
    scene_flow = np.moveaxis(read_planes_raw(d / "scene_flow.raw", 6), 0, -1)
    masks = _read_masks_png(d / "masks.png")
    with open(d / "labels.json") as f:
        labels = json.load(f)
    for tag in labels["degeneracy_tags"]:
        if tag not in DEGENERACY_TAGS:
            raise ValueError(f"unknown degeneracy tag: {tag}")
    if labels["flow_valid"] is None:
        valid = np.ones(flow.shape[:2], dtype=bool)
    else:
        valid = rle.decode_mask(labels["flow_valid"])
    return SceneSample(
        frames=frames.astype(np.float32),
        flow=flow,
        depth=depth,
        scene_flow=scene_flow.astype(np.float32),
        instance_masks=masks,
        motion_labels={int(k): bool(v) for k, v in labels["motion_labels"].items()},
        movable_labels={int(k): bool(v) for k, v in labels["movable_labels"].items()},
        degeneracy_tags=tuple(labels["degeneracy_tags"]),
        flow_valid=valid,
    )


def sample_dirs(dataset_dir) -> list:
    root = Path(dataset_dir)
    return sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("sample_"))


def write_dataset(out_dir, samples, manifest_extra: dict | None = None) -> dict:
    """Write samples plus a manifest; clean up the directory on failure."""
    root = Path(out_dir)
    created = not root.exists()
    root.mkdir(parents=True, exist_ok=True)
    tag_counts: dict = {}
    combo_counts: dict = {}
    n = 0
    try:
        for i, sample in enumerate(samples):
            write_sample(root / f"sample_{i:06d}", sample)
            for tag in sample.degeneracy_tags:
                tag_counts[tag] = tag_counts.get(tag, 0) + 1
            combo = "+".join(sample.degeneracy_tags)
            combo_counts[combo] = combo_counts.get(combo, 0) + 1
            n += 1
        manifest = {
            "format_version": 1,
            "num_samples": n,
            # Per-tag marginals; a sample may carry several tags.
            "tag_counts": dict(sorted(tag_counts.items())),
            # Disjoint bins keyed by the full tag set; values sum to num_samples.
            "tag_histogram": dict(sorted(combo_counts.items())),
        }
        if manifest_extra:
            manifest.update(manifest_extra)
        with open(root / "manifest.json", "w") as f:
            json.dump(manifest, f, indent=1, sort_keys=True)
    except Exception:
        if created:
            shutil.rmtree(root, ignore_errors=True)
        else:
            for p in sample_dirs(root):
                shutil.rmtree(p, ignore_errors=True)
            (root / "manifest.json").unlink(missing_ok=True)
        raise
    return manifest


def read_manifest(dataset_dir) -> dict:
    with open(Path(dataset_dir) / "manifest.json") as f:
        return json.load(f)
