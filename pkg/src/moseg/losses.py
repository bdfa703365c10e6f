"""Bipartite query/target matching and point-sampled segmentation losses.

Predictions are fixed-size query sets; each query either claims one
ground-truth mask or predicts "no object". Mask losses are evaluated on a
small set of sampled points instead of full maps, with most points placed
where the mask logits are least certain.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from scipy.optimize import linear_sum_assignment

MOVING_CLASS = 0
NO_OBJECT_CLASS = 1


@dataclass(frozen=True)
class LossWeights:
    ce: float = 5.0
    dice: float = 5.0
    cls: float = 2.0
    no_object: float = 0.1

    def __post_init__(self):
        for name in ("ce", "dice", "cls", "no_object"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")

    def scaled(self, factor: float) -> "LossWeights":
        return LossWeights(
            self.ce * factor, self.dice * factor, self.cls * factor, self.no_object * factor
        )


@dataclass(frozen=True)
class PointSampleConfig:
    n_points: int = 12544
    oversample_ratio: float = 3.0
    importance_ratio: float = 0.75

    def __post_init__(self):
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")
        if self.oversample_ratio < 1.0:
            raise ValueError("oversample_ratio must be >= 1")
        if not 0.0 <= self.importance_ratio <= 1.0:
            raise ValueError("importance_ratio must be in [0, 1]")


@dataclass(frozen=True)
class MatchAssignment:
    """Injective query -> target pairing; queries left out predict no-object."""

    pairs: Tuple[Tuple[int, int], ...]
    cost: float

    def __post_init__(self):
        queries = [q for q, _ in self.pairs]
        targets = [t for _, t in self.pairs]
        if len(set(queries)) != len(queries) or len(set(targets)) != len(targets):
            raise ValueError("assignment must be injective both ways")

    @property
    def query_indices(self) -> Tuple[int, ...]:
        return tuple(q for q, _ in self.pairs)

    @property
    def target_indices(self) -> Tuple[int, ...]:
        return tuple(t for _, t in self.pairs)


def sample_at_points(maps: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """Bilinear lookup of (N, C, H, W) maps at (N, K, 2) xy coords in [0, 1]^2.

    Border padding: points in the outer half-pixel read the edge value instead
    of bleeding toward zero, so a full-frame mask evaluates to 1 everywhere.
    """
    grid = coords[:, :, None, :].to(maps.dtype) * 2.0 - 1.0
    out = F.grid_sample(maps, grid, mode="bilinear", padding_mode="border", align_corners=False)
    return out[:, :, :, 0]


def sample_points(
    mask_logits: torch.Tensor,
    k: int,
    oversample_ratio: float = 3.0,
    importance_ratio: float = 0.75,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Pick k evaluation points per mask, biased toward uncertain regions.

    Draws oversample_ratio * k uniform proposals, keeps the
    importance_ratio * k with the smallest |logit| and fills the remainder
    with fresh uniform points. mask_logits: (N, H, W); returns (N, k, 2)
    xy coords in [0, 1]^2.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if mask_logits.dim() != 3:
        raise ValueError("mask_logits must be (N, H, W)")
    n = mask_logits.shape[0]
    device = mask_logits.device
    n_importance = int(k * importance_ratio)
    picked = []
    if n_importance > 0:
        n_proposals = max(int(k * oversample_ratio), k)
        proposals = torch.rand(
            n, n_proposals, 2, device=device, dtype=mask_logits.dtype, generator=generator
        )
        logits_at = sample_at_points(mask_logits[:, None], proposals)[:, 0]
        _, idx = torch.topk(-logits_at.abs(), n_importance, dim=1)
        picked.append(torch.gather(proposals, 1, idx[:, :, None].expand(-1, -1, 2)))
    n_uniform = k - n_importance
    if n_uniform > 0:
        picked.append(
            torch.rand(n, n_uniform, 2, device=device, dtype=mask_logits.dtype, generator=generator)
        )
    return torch.cat(picked, dim=1)


def dice_loss(pred_probs: torch.Tensor, gt_pts: torch.Tensor, eps: float = 1.0) -> torch.Tensor:
    """Soft overlap loss over the last dim: 1 - (2*sum(p*g)+eps)/(sum(p)+sum(g)+eps)."""
    gt = gt_pts.to(pred_probs.dtype)
    numer = 2.0 * (pred_probs * gt).sum(-1) + eps
    denom = pred_probs.sum(-1) + gt.sum(-1) + eps
    return 1.0 - numer / denom


def _pairwise_dice_cost(pred_probs: torch.Tensor, gt_pts: torch.Tensor) -> torch.Tensor:
    numer = 2.0 * pred_probs @ gt_pts.T + 1.0
    denom = pred_probs.sum(-1)[:, None] + gt_pts.sum(-1)[None, :] + 1.0
    return 1.0 - numer / denom


def _pairwise_ce_cost(pred_logits: torch.Tensor, gt_pts: torch.Tensor) -> torch.Tensor:
    # binary CE decomposes into a matmul: softplus(-l) against 1, softplus(l) against 0
    pos = F.softplus(-pred_logits)
    neg = F.softplus(pred_logits)
    return (pos @ gt_pts.T + neg @ (1.0 - gt_pts).T) / pred_logits.shape[-1]


def assign_minimum_cost(cost) -> MatchAssignment:
    """Solve the rectangular assignment problem for one cost matrix."""
    if torch.is_tensor(cost):
        cost = cost.detach().cpu().numpy()
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-d matrix")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost)
    pairs = tuple(sorted(zip(rows.tolist(), cols.tolist())))
    return MatchAssignment(pairs=pairs, cost=float(cost[rows, cols].sum()))


def hungarian_match(
    pred,
    target_masks: Sequence[torch.Tensor],
    weights: LossWeights = LossWeights(),
    n_points: int = 12544,
    generator: Optional[torch.Generator] = None,
) -> List[MatchAssignment]:
    """Optimal query/target pairing per batch element.

    pred: a prediction set with mask_logits (B, N_q, h, w) and class_logits
    (B, N_q, 2). target_masks: per-image (N_t, H, W) binary masks. Costs are
    evaluated on one shared set of uniform points per image, so predicted and
    ground-truth masks may live at different resolutions.
    """
    mask_logits = pred.mask_logits
    class_logits = pred.class_logits
    b, n_q = mask_logits.shape[:2]
    if len(target_masks) != b:
        raise ValueError("need one target mask stack per batch element")
    out = []
    with torch.no_grad():
        prob_moving = class_logits.softmax(-1)[..., MOVING_CLASS]
        for i, gt in enumerate(target_masks):
            n_t = gt.shape[0]
            if n_t == 0:
                out.append(MatchAssignment(pairs=(), cost=0.0))
                continue
            coords = torch.rand(
                1, n_points, 2,
                device=mask_logits.device, dtype=mask_logits.dtype, generator=generator,
            )
            pred_pts = sample_at_points(
                mask_logits[i][:, None], coords.expand(n_q, -1, -1)
            )[:, 0]
            gt_pts = sample_at_points(
                gt[:, None].to(mask_logits.dtype), coords.expand(n_t, -1, -1)
            )[:, 0]
            cost = (
                weights.cls * (-prob_moving[i])[:, None]
                + weights.ce * _pairwise_ce_cost(pred_pts, gt_pts)
                + weights.dice * _pairwise_dice_cost(pred_pts.sigmoid(), gt_pts)
            )
            out.append(assign_minimum_cost(cost))
    return out


def total_loss(
    predictions: Sequence,
    target_masks: Sequence[torch.Tensor],
    weights: LossWeights = LossWeights(),
    sample_cfg: PointSampleConfig = PointSampleConfig(),
    generator: Optional[torch.Generator] = None,
) -> Tuple[torch.Tensor, dict]:
    """Deep-supervision loss over every prediction set, each matched independently.

    Matched queries contribute point-sampled binary CE and dice on masks plus
    class CE at weight cls; unmatched queries contribute class CE toward
    no-object at weight no_object. Mask terms are normalized by the target
    count, class terms by the query count. Returns the weighted total and an
    unweighted per-term breakdown (cls has its per-query weights folded in).
    """
    if len(predictions) == 0:
        raise ValueError("need at least one prediction set")
    ref = predictions[0].mask_logits
    num_masks = max(sum(int(m.shape[0]) for m in target_masks), 1)
    parts = {
        "mask_ce": torch.zeros((), device=ref.device, dtype=ref.dtype),
        "dice": torch.zeros((), device=ref.device, dtype=ref.dtype),
        "cls": torch.zeros((), device=ref.device, dtype=ref.dtype),
    }
    for pred in predictions:
        assigns = hungarian_match(pred, target_masks, weights, sample_cfg.n_points, generator)
        b, n_q = pred.class_logits.shape[:2]
        target_cls = torch.full(
            (b, n_q), NO_OBJECT_CLASS, dtype=torch.long, device=ref.device
        )
        cls_weight = torch.full((b, n_q), weights.no_object, device=ref.device, dtype=ref.dtype)
        for i, assign in enumerate(assigns):
            if not assign.pairs:
                continue
            q_idx = list(assign.query_indices)
            target_cls[i, q_idx] = MOVING_CLASS
            cls_weight[i, q_idx] = weights.cls
            logits_i = pred.mask_logits[i, q_idx]
            gt_i = target_masks[i][list(assign.target_indices)].to(ref.dtype)
            with torch.no_grad():
                coords = sample_points(
                    logits_i,
                    sample_cfg.n_points,
                    sample_cfg.oversample_ratio,
                    sample_cfg.importance_ratio,
                    generator,
                )
                gt_pts = sample_at_points(gt_i[:, None], coords)[:, 0]
            pred_pts = sample_at_points(logits_i[:, None], coords)[:, 0]
            ce = F.binary_cross_entropy_with_logits(pred_pts, gt_pts, reduction="none")
            parts["mask_ce"] = parts["mask_ce"] + ce.mean(-1).sum() / num_masks
            parts["dice"] = parts["dice"] + dice_loss(pred_pts.sigmoid(), gt_pts).sum() / num_masks
        class_ce = F.cross_entropy(
            pred.class_logits.reshape(-1, 2), target_cls.reshape(-1), reduction="none"
        )
        parts["cls"] = parts["cls"] + (cls_weight.reshape(-1) * class_ce).sum() / (b * n_q)
    total = weights.ce * parts["mask_ce"] + weights.dice * parts["dice"] + parts["cls"]
    parts["total"] = total
    return total, parts
