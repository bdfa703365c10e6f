import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from moseg.fusioncore import Prediction
from moseg.losses import (
    MOVING_CLASS,
    NO_OBJECT_CLASS,
    LossWeights,
    MatchAssignment,
    PointSampleConfig,
    assign_minimum_cost,
    dice_loss,
    hungarian_match,
    sample_at_points,
    sample_points,
    total_loss,
)


def brute_force_min_cost(cost: np.ndarray) -> float:
    n_q, n_t = cost.shape
    best = math.inf
    for perm in itertools.permutations(range(n_q), n_t):
        best = min(best, sum(cost[q, t] for t, q in enumerate(perm)))
    return best


def make_prediction(mask_logits, class_logits):
    return Prediction(mask_logits=mask_logits, class_logits=class_logits, layer_index=0)


class TestLossWeights:
    def test_defaults(self):
        w = LossWeights()
        assert (w.ce, w.dice, w.cls, w.no_object) == (5.0, 5.0, 2.0, 0.1)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(ce=-1.0)

    def test_scaled(self):
        w = LossWeights().scaled(2.0)
        assert (w.ce, w.dice, w.cls, w.no_object) == (10.0, 10.0, 4.0, 0.2)


class TestPointSampleConfig:
    def test_defaults(self):
        cfg = PointSampleConfig()
        assert cfg.n_points == 12544
        assert cfg.oversample_ratio == 3.0
        assert cfg.importance_ratio == 0.75

    def test_invalid_rejected(self):
        with pytest.raises(ValueError):
            PointSampleConfig(n_points=0)
        with pytest.raises(ValueError):
            PointSampleConfig(oversample_ratio=0.5)
        with pytest.raises(ValueError):
            PointSampleConfig(importance_ratio=1.5)


class TestAssignMinimumCost:
    def test_two_by_two_frozen(self):
        # identity pairing costs 1 + 0 = 1, the swap costs 2 + 3 = 5
        assign = assign_minimum_cost(np.array([[1.0, 2.0], [3.0, 0.0]]))
        assert assign.pairs == ((0, 0), (1, 1))
        assert assign.cost == pytest.approx(1.0)

    def test_matches_brute_force_five_by_five(self):
        rng = np.random.default_rng(31)
        for _ in range(100):
            cost = rng.random((5, 5))
            assign = assign_minimum_cost(cost)
            assert assign.cost == pytest.approx(brute_force_min_cost(cost))

    @given(st.integers(0, 10**9))
    @settings(deadline=None)
    def test_matches_brute_force_rectangular(self, seed):
        rng = np.random.default_rng(seed)
        n_t = int(rng.integers(1, 7))
        cost = rng.normal(size=(8, n_t))
        assign = assign_minimum_cost(cost)
        assert len(assign.pairs) == n_t
        assert assign.cost == pytest.approx(brute_force_min_cost(cost))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            assign_minimum_cost(np.array([[1.0, np.nan], [0.0, 1.0]]))

    def test_injectivity_enforced(self):
        with pytest.raises(ValueError):
            MatchAssignment(pairs=((0, 0), (0, 1)), cost=0.0)
        with pytest.raises(ValueError):
            MatchAssignment(pairs=((0, 0), (1, 0)), cost=0.0)


class TestSamplePoints:
    def test_uniform_when_importance_zero(self):
        g = torch.Generator().manual_seed(5)
        logits = torch.randn(1, 8, 8)
        pts = sample_points(logits, 100_000, importance_ratio=0.0, generator=g)
        assert pts.shape == (1, 100_000, 2)
        mean = pts.mean(dim=(0, 1))
        assert torch.allclose(mean, torch.tensor([0.5, 0.5]), atol=0.02)

    def test_constant_logits_still_yield_k_points(self):
        g = torch.Generator().manual_seed(6)
        pts = sample_points(torch.full((2, 8, 8), 3.0), 77, generator=g)
        assert pts.shape == (2, 77, 2)
        assert pts.min() >= 0.0 and pts.max() <= 1.0

    def test_importance_concentrates_near_uncertain_boundary(self):
        # logits ramp from -10 to +10 across x = 0.5; |logit| smallest near the seam
        w = 256
        x = (torch.arange(w, dtype=torch.float32) + 0.5) / w
        logits = (10.0 * torch.tanh((x - 0.5) * 30.0)).expand(64, w)[None]
        g = torch.Generator().manual_seed(7)
        k = 100
        pts = sample_points(logits, k, importance_ratio=1.0, generator=g)
        near = (pts[0, :, 0] - 0.5).abs() <= 2.0 / math.sqrt(k)
        assert near.float().mean() >= 0.95

    def test_bad_arguments_rejected(self):
        with pytest.raises(ValueError):
            sample_points(torch.zeros(1, 4, 4), 0)
        with pytest.raises(ValueError):
            sample_points(torch.zeros(4, 4), 5)


class TestDiceLoss:
    def test_identical_masks_zero(self):
        ones = torch.ones(64)
        assert dice_loss(ones, ones).item() == pytest.approx(0.0)

    def test_disjoint_masks(self):
        k = 64
        gt = torch.zeros(k)
        gt[: k // 2] = 1.0
        loss = dice_loss(1.0 - gt, gt)
        assert loss.item() == pytest.approx(1.0 - 1.0 / (k + 1))

    def test_frozen_scalar_example(self):
        # 1 - (2*0.8 + 1) / (0.8 + 0.2 + 1 + 1) = 1 - 2.6/3
        loss = dice_loss(torch.tensor([0.8, 0.2]), torch.tensor([1.0, 0.0]))
        assert loss.item() == pytest.approx(1.0 - 2.6 / 3.0, abs=1e-6)
        assert loss.item() == pytest.approx(0.13333, abs=1e-5)

    def test_batched_rows(self):
        pred = torch.rand(3, 5, 16)
        gt = (torch.rand(3, 5, 16) > 0.5).float()
        assert dice_loss(pred, gt).shape == (3, 5)


class TestHungarianMatch:
    def test_zero_targets_empty_assignment(self):
        pred = make_prediction(torch.randn(1, 4, 8, 8), torch.randn(1, 4, 2))
        assigns = hungarian_match(pred, [torch.zeros(0, 16, 16)])
        assert assigns[0].pairs == ()

    def test_obvious_geometry_matched(self):
        # query 0 paints the left half, query 1 the right; targets are those halves
        masks = torch.full((1, 2, 8, 8), -20.0)
        masks[0, 0, :, :4] = 20.0
        masks[0, 1, :, 4:] = 20.0
        classes = torch.zeros(1, 2, 2)
        gt = torch.zeros(2, 32, 32)
        gt[0, :, 16:] = 1.0  # target 0 is the right half
        gt[1, :, :16] = 1.0
        g = torch.Generator().manual_seed(8)
        assigns = hungarian_match(make_prediction(masks, classes), [gt], generator=g)
        assert assigns[0].pairs == ((0, 1), (1, 0))

    def test_optimal_against_permutation_oracle(self):
        torch.manual_seed(9)
        w = LossWeights()
        n_q, n_t, k = 7, 4, 512
        masks = torch.randn(1, n_q, 8, 8)
        classes = torch.randn(1, n_q, 2)
        gt = (torch.rand(n_t, 16, 16) > 0.5).float()
        assigns = hungarian_match(
            make_prediction(masks, classes), [gt], w, n_points=k,
            generator=torch.Generator().manual_seed(11),
        )
        # replay the same point draw to rebuild the cost matrix independently
        g = torch.Generator().manual_seed(11)
        coords = torch.rand(1, k, 2, generator=g)
        pred_pts = sample_at_points(masks[0][:, None], coords.expand(n_q, -1, -1))[:, 0]
        gt_pts = sample_at_points(gt[:, None], coords.expand(n_t, -1, -1))[:, 0]
        prob = classes[0].softmax(-1)[:, MOVING_CLASS]
        cost = np.zeros((n_q, n_t))
        for i in range(n_q):
            for j in range(n_t):
                p, t = pred_pts[i], gt_pts[j]
                ce = torch.nn.functional.binary_cross_entropy_with_logits(p, t)
                dice = dice_loss(p.sigmoid(), t)
                cost[i, j] = (w.cls * -prob[i] + w.ce * ce + w.dice * dice).item()
        assert assigns[0].cost == pytest.approx(brute_force_min_cost(cost), rel=1e-5)

    def test_batch_size_mismatch_rejected(self):
        pred = make_prediction(torch.randn(2, 4, 8, 8), torch.randn(2, 4, 2))
        with pytest.raises(ValueError):
            hungarian_match(pred, [torch.zeros(1, 8, 8)])


def saturated_instance(dtype=torch.float32):
    """Two queries, one full-frame target; query 0 is exactly right."""
    masks = torch.full((1, 2, 16, 16), -40.0, dtype=dtype)
    masks[0, 0] = 40.0
    classes = torch.full((1, 2, 2), -20.0, dtype=dtype)
    classes[0, 0, MOVING_CLASS] = 20.0
    classes[0, 1, NO_OBJECT_CLASS] = 20.0
    gt = torch.ones(1, 32, 32, dtype=dtype)
    return make_prediction(masks, classes), [gt]


class TestTotalLoss:
    def test_perfect_predictions_near_zero(self):
        pred, gt = saturated_instance()
        g = torch.Generator().manual_seed(12)
        total, parts = total_loss([pred], gt, sample_cfg=PointSampleConfig(n_points=256), generator=g)
        assert total.item() == pytest.approx(0.0, abs=1e-6)
        assert parts["dice"].item() == pytest.approx(0.0, abs=1e-7)

    def test_empty_targets_no_object_pressure_only(self):
        torch.manual_seed(13)
        classes = torch.randn(1, 6, 2)
        pred = make_prediction(torch.randn(1, 6, 8, 8), classes)
        w = LossWeights()
        total, parts = total_loss([pred], [torch.zeros(0, 16, 16)], w)
        expected = w.no_object * torch.nn.functional.cross_entropy(
            classes[0], torch.full((6,), NO_OBJECT_CLASS, dtype=torch.long)
        )
        assert total.item() == pytest.approx(expected.item(), rel=1e-6)
        assert parts["mask_ce"].item() == 0.0
        assert parts["dice"].item() == 0.0

    def test_every_prediction_set_contributes(self):
        torch.manual_seed(14)
        preds = [
            make_prediction(torch.randn(1, 4, 8, 8), torch.randn(1, 4, 2))
            for _ in range(3)
        ]
        gt = [(torch.rand(2, 16, 16) > 0.5).float()]
        cfg = PointSampleConfig(n_points=64)
        one = total_loss(preds[:1], gt, sample_cfg=cfg, generator=torch.Generator().manual_seed(1))[0]
        single = [
            total_loss([p], gt, sample_cfg=cfg, generator=torch.Generator().manual_seed(1))[0]
            for p in preds
        ]
        full = total_loss(preds, gt, sample_cfg=cfg, generator=torch.Generator().manual_seed(1))[0]
        assert full.item() > one.item()
        assert full.item() == pytest.approx(sum(s.item() for s in single), rel=0.02)

    def test_nonnegative_on_random_instances(self):
        torch.manual_seed(15)
        for _ in range(5):
            pred = make_prediction(torch.randn(2, 5, 8, 8), torch.randn(2, 5, 2))
            gt = [(torch.rand(2, 16, 16) > 0.5).float(), torch.zeros(0, 16, 16)]
            total, _ = total_loss([pred], gt, sample_cfg=PointSampleConfig(n_points=64))
            assert total.item() >= 0.0

    @given(st.floats(0.1, 10.0))
    @settings(deadline=None, max_examples=25)
    def test_scaling_weights_scales_loss(self, factor):
        torch.manual_seed(16)
        pred = make_prediction(torch.randn(1, 3, 8, 8), torch.randn(1, 3, 2))
        gt = [(torch.rand(2, 16, 16) > 0.5).float()]
        w = LossWeights()
        cfg = PointSampleConfig(n_points=32, importance_ratio=0.0)
        base = total_loss([pred], gt, w, cfg, torch.Generator().manual_seed(2))[0]
        scaled = total_loss([pred], gt, w.scaled(factor), cfg, torch.Generator().manual_seed(2))[0]
        assert scaled.item() == pytest.approx(factor * base.item(), rel=1e-5)
        a = hungarian_match(pred, gt, w, 32, torch.Generator().manual_seed(3))
        b = hungarian_match(pred, gt, w.scaled(factor), 32, torch.Generator().manual_seed(3))
        assert a[0].pairs == b[0].pairs

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(17)
        masks = torch.randn(1, 3, 8, 8, dtype=torch.float64, requires_grad=True)
        classes = torch.randn(1, 3, 2, dtype=torch.float64, requires_grad=True)
        gt = [(torch.rand(2, 16, 16) > 0.5).double()]
        cfg = PointSampleConfig(n_points=64, importance_ratio=0.0)

        def value(m, c):
            pred = make_prediction(m, c)
            return total_loss([pred], gt, sample_cfg=cfg, generator=torch.Generator().manual_seed(4))[0]

        total = value(masks, classes)
        total.backward()
        eps = 1e-6
        rng = np.random.default_rng(18)
        for leaf in (masks, classes):
            flat = leaf.detach().flatten()
            grad = leaf.grad.flatten()
            for idx in rng.choice(flat.numel(), size=min(8, flat.numel()), replace=False):
                bump = torch.zeros_like(flat)
                bump[idx] = eps
                shaped = bump.reshape(leaf.shape)
                hi = value(
                    masks.detach() + (shaped if leaf is masks else 0),
                    classes.detach() + (shaped if leaf is classes else 0),
                )
                lo = value(
                    masks.detach() - (shaped if leaf is masks else 0),
                    classes.detach() - (shaped if leaf is classes else 0),
                )
                fd = (hi.item() - lo.item()) / (2 * eps)
                denom = max(abs(fd), abs(grad[idx].item()), 1e-12)
                assert abs(fd - grad[idx].item()) / denom < 1e-4

    def test_fifty_step_descent_strictly_decreases(self):
        torch.manual_seed(19)
        masks = torch.randn(1, 1, 8, 8, dtype=torch.float64, requires_grad=True)
        classes = torch.randn(1, 1, 2, dtype=torch.float64, requires_grad=True)
        gt = torch.zeros(1, 16, 16, dtype=torch.float64)
        gt[0, 4:12, 4:12] = 1.0
        cfg = PointSampleConfig(n_points=128, importance_ratio=0.0)
        opt = torch.optim.SGD([masks, classes], lr=0.2)
        losses = []
        for _ in range(55):
            opt.zero_grad()
            pred = make_prediction(masks, classes)
            total, _ = total_loss([pred], [gt], sample_cfg=cfg, generator=torch.Generator().manual_seed(5))
            total.backward()
            opt.step()
            losses.append(total.item())
        diffs = np.diff(losses)
        assert (diffs < 0).all()

    def test_requires_at_least_one_set(self):
        with pytest.raises(ValueError):
            total_loss([], [torch.zeros(0, 8, 8)])
