"""Instance-level evaluation for moving-object segmentation.

Detections are per-frame lists of (boolean mask, confidence). Beyond the COCO
AP family, rates are averaged over a grid of IoU and confidence thresholds,
and false positive/negative counts are normalized by frame count so datasets
of different sizes stay comparable.
"""

import json
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .rle import decode_mask, encode_mask

IOU_GRID = (0.01, 0.1, 0.3, 0.5, 0.75, 0.9, 0.95)
CONF_GRID = (0.3, 0.5, 0.7)
AP_IOU_GRID = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

# COCO classes that plausibly move on their own; everything else in the
# 80-class taxonomy counts as static scenery for the detector baseline.
MOVING_CLASSES = frozenset(
    {
        "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train",
        "truck", "boat", "bird", "cat", "dog", "horse", "sheep", "cow",
        "elephant", "bear", "zebra", "giraffe", "frisbee", "skis", "snowboard",
        "sports ball", "kite", "baseball bat", "baseball glove", "skateboard",
        "surfboard", "tennis racket",
    }
)
STATIC_CLASSES = frozenset(
    {
        "traffic light", "fire hydrant", "stop sign", "parking meter", "bench",
        "backpack", "umbrella", "handbag", "tie", "suitcase", "bottle",
        "wine glass", "cup", "fork", "knife", "spoon", "bowl", "banana",
        "apple", "sandwich", "orange", "broccoli", "carrot", "hot dog",
        "pizza", "donut", "cake", "chair", "couch", "potted plant", "bed",
        "dining table", "toilet", "tv", "laptop", "mouse", "remote",
        "keyboard", "cell phone", "microwave", "oven", "toaster", "sink",
        "refrigerator", "book", "clock", "vase", "scissors", "teddy bear",
        "hair drier", "toothbrush",
    }
)


def is_moving_class(label) -> bool:
    """Movable flag for a generator body (bool) or a COCO class name."""
    if isinstance(label, (bool, np.bool_)):
        return bool(label)
    if label in MOVING_CLASSES:
        return True
    if label in STATIC_CLASSES:
        return False
    raise ValueError(f"unknown class label: {label!r}")


@dataclass(frozen=True)
class FrameDetections:
    """One frame's predictions [(mask, confidence)] and ground-truth masks."""

    predictions: Tuple[Tuple[np.ndarray, float], ...]
    ground_truth: Tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(
            self,
            "predictions",
            tuple((np.asarray(m), float(c)) for m, c in self.predictions),
        )
        object.__setattr__(
            self, "ground_truth", tuple(np.asarray(m) for m in self.ground_truth)
        )
        shapes = {m.shape for m, _ in self.predictions} | {m.shape for m in self.ground_truth}
        if len(shapes) > 1:
            raise ValueError("all masks in a frame must share one resolution")
        for m, conf in self.predictions:
            if m.dtype != np.bool_:
                raise ValueError("prediction masks must be boolean")
            if not 0.0 <= conf <= 1.0:
                raise ValueError("confidence must be in [0, 1]")
        for m in self.ground_truth:
            if m.dtype != np.bool_:
                raise ValueError("ground-truth masks must be boolean")


@dataclass(frozen=True)
class MetricReport:
    ap: Optional[float]
    ap50: Optional[float]
    ap75: Optional[float]
    bg: float
    obj: float
    pu: float
    ru: float
    fu: float
    fp_per_frame: float
    fn_per_frame: float

    def __post_init__(self):
        for name in ("bg", "obj", "pu", "ru", "fu"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.fp_per_frame < 0 or self.fn_per_frame < 0:
            raise ValueError("per-frame counts must be >= 0")
        expected = harmonic_mean(self.pu, self.ru)
        if abs(self.fu - expected) > 1e-9:
            raise ValueError("fu must be the harmonic mean of pu and ru")

    def to_dict(self) -> dict:
        return {
            "ap": self.ap, "ap50": self.ap50, "ap75": self.ap75,
            "bg": self.bg, "obj": self.obj,
            "pu": self.pu, "ru": self.ru, "fu": self.fu,
            "fp_per_frame": self.fp_per_frame, "fn_per_frame": self.fn_per_frame,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricReport":
        return cls(**data)


def harmonic_mean(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.logical_and(a, b).sum()
    union = np.logical_or(a, b).sum()
    return float(inter) / float(union) if union > 0 else 0.0


def match_detections(
    predictions: Sequence[Tuple[np.ndarray, float]],
    ground_truth: Sequence[np.ndarray],
    iou_t: float,
) -> Tuple[List[Tuple[int, int]], List[int], List[int]]:
    """Greedy confidence-ordered matching at one IoU threshold.

    Each prediction, highest confidence first, claims the unclaimed ground
    truth with the highest IoU if that IoU reaches iou_t. Returns
    (tp pairs (pred idx, gt idx), fp pred indices, fn gt indices).
    """
    if not 0.0 < iou_t <= 1.0:
        raise ValueError("iou_t must be in (0, 1]")
    order = sorted(range(len(predictions)), key=lambda i: -predictions[i][1])
    claimed = set()
    tp, fp = [], []
    for i in order:
        mask = predictions[i][0]
        best_j, best_iou = -1, 0.0
        for j, gt in enumerate(ground_truth):
            if j in claimed:
                continue
            iou = mask_iou(mask, gt)
            if iou > best_iou:
                best_j, best_iou = j, iou
        if best_j >= 0 and best_iou >= iou_t:
            claimed.add(best_j)
            tp.append((i, best_j))
        else:
            fp.append(i)
    fn = [j for j in range(len(ground_truth)) if j not in claimed]
    return tp, fp, fn


def _interpolated_ap(tp_flags: np.ndarray, n_gt: int) -> float:
    """Area under the 101-point interpolated precision-recall curve.

    tp_flags: per-prediction 1/0 outcomes already sorted by confidence desc.
    """
    if n_gt == 0:
        raise ValueError("needs at least one ground-truth instance")
    if tp_flags.size == 0:
        return 0.0
    tp_cum = np.cumsum(tp_flags)
    fp_cum = np.cumsum(1 - tp_flags)
    recall = tp_cum / n_gt
    precision = tp_cum / (tp_cum + fp_cum)
    levels = np.linspace(0.0, 1.0, 101)
    interp = np.zeros(101)
    for k, r in enumerate(levels):
        at_least = precision[recall >= r - 1e-12]
        interp[k] = at_least.max() if at_least.size else 0.0
    return float(interp.mean())


def _ap_at_threshold(frames: Sequence[FrameDetections], iou_t: float) -> float:
    scored = []
    n_gt = 0
    for frame in frames:
        n_gt += len(frame.ground_truth)
        tp, fp, _ = match_detections(frame.predictions, frame.ground_truth, iou_t)
        hit = {i for i, _ in tp}
        for i, (_, conf) in enumerate(frame.predictions):
            scored.append((conf, 1 if i in hit else 0))
    scored.sort(key=lambda x: -x[0])
    flags = np.array([flag for _, flag in scored], dtype=np.int64)
    return _interpolated_ap(flags, n_gt)


def coco_ap(
    frames: Sequence[FrameDetections],
) -> Tuple[Optional[float], Optional[float], Optional[float]]:
    """(AP averaged over IoU 0.50:0.05:0.95, AP50, AP75); None when no GT exists."""
    if len(frames) == 0:
        raise ValueError("needs at least one frame")
    if sum(len(f.ground_truth) for f in frames) == 0:
        return None, None, None
    per_iou = {t: _ap_at_threshold(frames, t) for t in AP_IOU_GRID}
    ap = float(np.mean([per_iou[t] for t in AP_IOU_GRID]))
    return ap, per_iou[0.5], per_iou[0.75]


def _grid_counts(
    frames: Sequence[FrameDetections],
    iou_set: Sequence[float],
    conf_set: Sequence[float],
) -> List[Tuple[int, int, int]]:
    """(TP, FP, FN) totals per (iou_t, conf_t) grid cell, iou-major order."""
    counts = []
    for iou_t in iou_set:
        for conf_t in conf_set:
            tp_n = fp_n = fn_n = 0
            for frame in frames:
                kept = [(m, c) for m, c in frame.predictions if c >= conf_t]
                tp, fp, fn = match_detections(kept, frame.ground_truth, iou_t)
                tp_n += len(tp)
                fp_n += len(fp)
                fn_n += len(fn)
            counts.append((tp_n, fp_n, fn_n))
    return counts


def pu_ru_fu(
    frames: Sequence[FrameDetections],
    iou_set: Sequence[float] = IOU_GRID,
    conf_set: Sequence[float] = CONF_GRID,
) -> Tuple[float, float, float]:
    """Instance precision/recall averaged over the threshold grid.

    Cells with no surviving predictions count precision 0 rather than being
    dropped, so empty output is penalized. Fu is the harmonic mean of the
    averaged precision and recall.
    """
    if len(iou_set) == 0 or len(conf_set) == 0:
        raise ValueError("threshold sets must be non-empty")
    precisions, recalls = [], []
    for tp_n, fp_n, fn_n in _grid_counts(frames, iou_set, conf_set):
        precisions.append(tp_n / (tp_n + fp_n) if tp_n + fp_n > 0 else 0.0)
        recalls.append(tp_n / (tp_n + fn_n) if tp_n + fn_n > 0 else 0.0)
    pu = float(np.mean(precisions))
    ru = float(np.mean(recalls))
    return pu, ru, harmonic_mean(pu, ru)


def fp_fn(
    frames: Sequence[FrameDetections],
    iou_set: Sequence[float] = IOU_GRID,
    conf_set: Sequence[float] = CONF_GRID,
) -> Tuple[float, float]:
    """Grid-averaged false positive/negative totals divided by frame count."""
    if len(frames) == 0:
        raise ValueError("needs at least one frame")
    counts = _grid_counts(frames, iou_set, conf_set)
    fp_mean = float(np.mean([fp_n for _, fp_n, _ in counts]))
    fn_mean = float(np.mean([fn_n for _, _, fn_n in counts]))
    return fp_mean / len(frames), fn_mean / len(frames)


def bg_obj_precision(
    frames: Sequence[FrameDetections],
    conf_set: Sequence[float] = CONF_GRID,
) -> Tuple[float, float]:
    """Pixel precision of the collapsed foreground and background masks.

    Per frame and confidence threshold, predictions are OR-ed into one
    foreground mask; obj is the fraction of predicted foreground that is
    truly foreground, bg the same for background. Samples with an empty
    denominator are excluded; with no valid samples at all the value is 0.
    """
    if len(frames) == 0:
        raise ValueError("needs at least one frame")
    obj_samples, bg_samples = [], []
    for frame in frames:
        if frame.ground_truth:
            gt_fg = np.logical_or.reduce([m for m in frame.ground_truth])
        else:
            shapes = [m.shape for m, _ in frame.predictions]
            gt_fg = np.zeros(shapes[0] if shapes else (1, 1), dtype=bool)
        for conf_t in conf_set:
            kept = [m for m, c in frame.predictions if c >= conf_t]
            pred_fg = (
                np.logical_or.reduce(kept) if kept else np.zeros_like(gt_fg)
            )
            n_fg = pred_fg.sum()
            if n_fg > 0:
                obj_samples.append(np.logical_and(pred_fg, gt_fg).sum() / n_fg)
            n_bg = (~pred_fg).sum()
            if n_bg > 0:
                bg_samples.append(np.logical_and(~pred_fg, ~gt_fg).sum() / n_bg)
    obj = float(np.mean(obj_samples)) if obj_samples else 0.0
    bg = float(np.mean(bg_samples)) if bg_samples else 0.0
    return bg, obj


def evaluate(
    frames: Sequence[FrameDetections],
    iou_set: Sequence[float] = IOU_GRID,
    conf_set: Sequence[float] = CONF_GRID,
) -> MetricReport:
    """Assemble the full report over one detection dataset."""
    ap, ap50, ap75 = coco_ap(frames)
    pu, ru, fu = pu_ru_fu(frames, iou_set, conf_set)
    fp_rate, fn_rate = fp_fn(frames, iou_set, conf_set)
    bg, obj = bg_obj_precision(frames, conf_set)
    return MetricReport(
        ap=ap, ap50=ap50, ap75=ap75, bg=bg, obj=obj,
        pu=pu, ru=ru, fu=fu,
        fp_per_frame=fp_rate, fn_per_frame=fn_rate,
    )


def detections_from_prediction(
    prediction,
    image_size: Tuple[int, int],
    mask_threshold: float = 0.5,
) -> List[List[Tuple[np.ndarray, float]]]:
    """Turn one query-set prediction into per-image detection lists.

    Mask logits are upsampled to image_size and binarized by sigmoid
    probability; confidence is the class probability of "moving object".
    Queries whose binary mask is empty are dropped.
    """
    mask_logits = prediction.mask_logits.detach()
    class_logits = prediction.class_logits.detach()
    with torch.no_grad():
        up = F.interpolate(mask_logits, size=image_size, mode="bilinear", align_corners=False)
        masks = (torch.sigmoid(up) > mask_threshold).cpu().numpy()
        conf = class_logits.softmax(-1)[..., 0].cpu().numpy()
    out = []
    for b in range(masks.shape[0]):
        dets = [
            (masks[b, q], float(conf[b, q]))
            for q in range(masks.shape[1])
            if masks[b, q].any()
        ]
        out.append(dets)
    return out


def write_detections_jsonl(path, frames: Sequence[FrameDetections]) -> None:
    """One JSON object per frame: {frame_id, instances: [{rle_mask, confidence}]}."""
    with open(path, "w") as f:
        for frame_id, frame in enumerate(frames):
            record = {
                "frame_id": frame_id,
                "instances": [
                    {"rle_mask": encode_mask(m), "confidence": c}
                    for m, c in frame.predictions
                ],
            }
            f.write(json.dumps(record, sort_keys=True) + "\n")


def read_detections_jsonl(path) -> List[List[Tuple[np.ndarray, float]]]:
    """Prediction lists per frame, in frame_id order."""
    records = []
    with open(path) as f:
        for line in f:
            if line.strip():
                records.append(json.loads(line))
    records.sort(key=lambda r: r["frame_id"])
    return [
        [(decode_mask(inst["rle_mask"]), inst["confidence"]) for inst in rec["instances"]]
        for rec in records
    ]
