"""Losses, one-to-one matching, and the toy training loop."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparseobb import autodiff as ad
from sparseobb import training as tr
from sparseobb.detection import ModelConfig, build_model, pipeline_forward
from sparseobb.synth import SyntheticSceneConfig, make_dataset


def test_loss_weights_default_and_validation():
    w = tr.LossWeights()
    assert (w.lambda_cls, w.lambda_l1, w.lambda_iou) == (2.0, 5.0, 2.0)
    with pytest.raises(ValueError):
        tr.LossWeights(lambda_l1=-1.0)


def test_ground_truth_scene_canonicalizes():
    s = tr.GroundTruthScene(np.array([[10, 10, 4, 8, math.pi / 2 + 0.1]]),
                            (64, 64))
    assert s.boxes[0, 2] == 8.0 and s.boxes[0, 3] == 4.0
    assert s.boxes[0, 4] == pytest.approx(0.1)


# ---------------------------------------------------------------------------
# focal loss


def test_focal_hand_values():
    """p = 0.7 positive and negative cases, gamma=2, alpha=0.25.

    pos: -0.25 * 0.3^2 * ln(0.7) = 0.00802...
    neg: -0.75 * 0.7^2 * ln(0.3) = 0.44242...
    """
    logit = math.log(0.7 / 0.3)
    assert tr.focal_loss(logit, 1) == pytest.approx(
        -0.25 * 0.09 * math.log(0.7), rel=1e-9)
    assert tr.focal_loss(logit, 0) == pytest.approx(
        -0.75 * 0.49 * math.log(0.3), rel=1e-9)


def test_focal_easy_example_downweighted():
    confident_pos = tr.focal_loss(4.0, 1)     # p ~ 0.982
    uncertain_pos = tr.focal_loss(0.0, 1)     # p = 0.5
    assert confident_pos < uncertain_pos / 50


def test_focal_terms_tensor_matches_scalar():
    logits = np.array([-2.0, -0.3, 0.0, 1.4, 3.0])
    targets = np.array([0.0, 1.0, 0.0, 1.0, 0.0])
    got = tr._focal_terms(ad.Tensor(logits), targets).data
    want = [tr.focal_loss(l, int(t)) for l, t in zip(logits, targets)]
    assert np.allclose(got, want, rtol=1e-12)


# ---------------------------------------------------------------------------
# box losses


def test_l1_box_loss_normalized_units():
    pred = np.array([10.0, 20.0, 30.0, 40.0, 0.2])
    gt = np.array([20.0, 10.0, 40.0, 30.0, 0.0])
    got = tr.l1_box_loss(pred, gt, 100.0, 50.0)
    want = 10 / 100 + 10 / 50 + 10 / 100 + 10 / 50 + 0.2 / math.pi
    assert got == pytest.approx(want, rel=1e-12)


def test_l1_periodic_angle_wraps():
    pred = np.array([0, 0, 10, 10, 0.02])
    gt = np.array([0, 0, 10, 10, math.pi / 2 - 0.02])
    plain = tr.l1_box_loss(pred, gt, 1, 1)
    wrapped = tr.l1_box_loss(pred, gt, 1, 1, periodic_angle=True)
    assert wrapped < plain
    assert wrapped == pytest.approx(0.04 / math.pi, rel=1e-9)


def test_iou_loss_bounds():
    b = np.array([5, 5, 4, 2, 0.3])
    assert tr.iou_loss(b, b) == pytest.approx(0.0, abs=1e-12)
    far = np.array([50, 50, 4, 2, 0.3])
    assert tr.iou_loss(b, far) == 1.0


# ---------------------------------------------------------------------------
# matching


def test_hungarian_hand_case():
    cost = np.array([[1.0, 2.0], [2.0, 4.0]])
    res = tr.hungarian_match(cost)
    # assigning pred1->gt0 (2) + pred0->gt1 (2) = 4 beats 1 + 4 = 5
    assert res.pairs == [(1, 0), (0, 1)]
    assert res.total_cost == pytest.approx(4.0)
    assert res.unmatched_predictions == []


def test_hungarian_more_predictions_than_gt():
    cost = np.array([[5.0], [1.0], [3.0]])
    res = tr.hungarian_match(cost)
    assert res.pairs == [(1, 0)]
    assert sorted(res.unmatched_predictions) == [0, 2]


def test_hungarian_empty_gt():
    res = tr.hungarian_match(np.zeros((4, 0)))
    assert res.pairs == []
    assert res.unmatched_predictions == [0, 1, 2, 3]
    assert res.total_cost == 0.0


def test_hungarian_rejects_nonfinite():
    with pytest.raises(ValueError):
        tr.hungarian_match(np.array([[np.nan, 1.0], [1.0, 2.0]]))


def test_hungarian_canonical_tie_break():
    # both diagonals cost 2: canonical picks pred 0 for gt 0
    cost = np.ones((2, 2))
    res = tr.hungarian_match(cost, canonical=True)
    assert res.pairs == [(0, 0), (1, 1)]


def test_brute_force_limits():
    with pytest.raises(ValueError):
        tr.brute_force_match(np.zeros((9, 9)))


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10_000))
@settings(max_examples=120, deadline=None)
def test_hungarian_agrees_with_brute_force(n, m, seed):
    m = min(n, m)
    rng = np.random.default_rng(seed)
    cost = rng.uniform(0, 10, (n, m))
    if seed % 3 == 0:
        cost = np.round(cost)   # force ties
    fast = tr.hungarian_match(cost, canonical=True)
    slow = tr.brute_force_match(cost)
    assert fast.total_cost == pytest.approx(slow.total_cost, abs=1e-12)
    assert fast.pairs == slow.pairs


def test_matching_cost_matrix_shape_and_content():
    gts = tr.GroundTruthScene(np.array([[32.0, 32.0, 20.0, 10.0, 0.3]]), (64, 64))
    logits = np.array([[2.0], [-2.0]])
    boxes = np.array([[32.0, 32.0, 20.0, 10.0, 0.3],
                      [10.0, 10.0, 5.0, 5.0, 0.0]])
    cost = tr.matching_cost_matrix(logits, boxes, gts)
    assert cost.shape == (2, 1)
    # exact box + confident logit must beat distant box + low logit
    assert cost[0, 0] < cost[1, 0]
    # exact geometric match: only the classification term remains
    assert cost[0, 0] == pytest.approx(2.0 * tr.focal_loss(2.0, 1), rel=1e-9)


# ---------------------------------------------------------------------------
# set loss


def _tiny_outputs(logits, boxes):
    return [[(ad.Tensor(np.asarray(logits, dtype=np.float64)),
              ad.Tensor(np.asarray(boxes, dtype=np.float64)))]]


def test_set_loss_perfect_prediction_small():
    gt = np.array([[32.0, 32.0, 20.0, 10.0, 0.3]])
    scene = tr.GroundTruthScene(gt, (64, 64))
    logits = np.full((1, 1), 12.0)     # p ~ 1
    loss, parts = tr.set_loss(_tiny_outputs(logits, gt), [scene])
    assert parts["l1"] == pytest.approx(0.0, abs=1e-12)
    assert parts["iou"] == pytest.approx(0.0, abs=1e-9)
    assert float(loss.data) < 1e-4


def test_set_loss_normalizer_is_total_gt():
    gt2 = np.array([[20.0, 20.0, 10.0, 6.0, 0.1],
                    [44.0, 44.0, 12.0, 8.0, 0.4]])
    scene2 = tr.GroundTruthScene(gt2, (64, 64))
    logits2 = np.full((2, 1), 12.0)
    loss2, _ = tr.set_loss(_tiny_outputs(logits2, gt2), [scene2])

    # duplicate the scene: same per-GT average, so the loss must not change
    outs = _tiny_outputs(logits2, gt2) + _tiny_outputs(logits2, gt2)
    loss4, _ = tr.set_loss(outs, [scene2, scene2])
    assert float(loss4.data) == pytest.approx(2 * float(loss2.data) / 2, rel=1e-9)


def test_set_loss_empty_scene_cls_only():
    scene = tr.GroundTruthScene(np.zeros((0, 5)), (64, 64))
    logits = np.array([[-4.0], [-4.0]])
    boxes = np.array([[10.0, 10.0, 5.0, 5.0, 0.0],
                      [20.0, 20.0, 5.0, 5.0, 0.0]])
    loss, parts = tr.set_loss(_tiny_outputs(logits, boxes), [scene])
    assert parts["l1"] == 0.0 and parts["iou"] == 0.0
    assert parts["matched"] == 0
    want = 2.0 * sum(tr.focal_loss(-4.0, 0) for _ in range(2))  # / max(0,1)
    assert float(loss.data) == pytest.approx(want, rel=1e-9)


def test_set_loss_frozen_match_used():
    gt = np.array([[32.0, 32.0, 20.0, 10.0, 0.3]])
    scene = tr.GroundTruthScene(gt, (64, 64))
    logits = np.array([[3.0], [3.0]])
    boxes = np.array([[10.0, 10.0, 5.0, 5.0, 0.0], gt[0]])
    free, _ = tr.set_loss(_tiny_outputs(logits, boxes), [scene])
    forced = tr.MatchResult([(0, 0)], [1])
    frozen, _ = tr.set_loss(_tiny_outputs(logits, boxes), [scene],
                            frozen_matches=[[forced]])
    # forcing the bad prediction onto the GT must cost more
    assert float(frozen.data) > float(free.data)


def test_set_loss_validates_batch():
    with pytest.raises(ValueError):
        tr.set_loss([], [])


def test_set_loss_gradient_direction():
    """Gradient on a matched box must point from prediction toward the GT
    center (L1 sign) when there is no overlap."""
    gt = np.array([[40.0, 40.0, 10.0, 6.0, 0.0]])
    scene = tr.GroundTruthScene(gt, (64, 64))
    boxes = ad.Tensor(np.array([[20.0, 20.0, 10.0, 6.0, 0.0]]), requires_grad=True)
    logits = ad.Tensor(np.full((1, 1), 2.0))
    loss, _ = tr.set_loss([[(logits, boxes)]], [scene])
    loss.backward()
    assert boxes.grad[0, 0] < 0     # increasing cx decreases |cx - gt|
    assert boxes.grad[0, 1] < 0


# ---------------------------------------------------------------------------
# toy loop


def test_train_toy_smoke_reduces_loss():
    scfg = SyntheticSceneConfig(channels=16)
    data = make_dataset(2, base_seed=0, cfg=scfg)
    mcfg = ModelConfig(num_proposals=10, channels=16, hidden=4, grid=5,
                       stages=2, heads=2, sampling_ratio=1, init="random")
    tcfg = tr.TrainConfig(model=mcfg, iters=30, lr=1e-3, batch_size=1,
                          eval_interval=30, seed=0)
    model, log = tr.train_toy(tcfg, data)
    assert len(log) == 30
    early = np.mean([r["loss"] for r in log[:5]])
    late = np.mean([r["loss"] for r in log[-5:]])
    assert late < early
    assert "ap50" in log[-1]


def test_train_toy_rejects_empty_dataset():
    with pytest.raises(ValueError):
        tr.train_toy(tr.TrainConfig(), [])


def test_train_toy_deterministic():
    scfg = SyntheticSceneConfig(channels=16)
    data = make_dataset(1, base_seed=3, cfg=scfg)
    mcfg = ModelConfig(num_proposals=6, channels=16, hidden=4, grid=5,
                       stages=1, heads=2, sampling_ratio=1, init="random")
    tcfg = tr.TrainConfig(model=mcfg, iters=8, lr=1e-3, batch_size=1,
                          eval_interval=100, seed=5)
    _, log_a = tr.train_toy(tcfg, data)
    _, log_b = tr.train_toy(tcfg, data)
    assert [r["loss"] for r in log_a] == [r["loss"] for r in log_b]


def test_evaluate_model_reports_thresholds():
    scfg = SyntheticSceneConfig(channels=16)
    data = make_dataset(1, base_seed=1, cfg=scfg)
    mcfg = ModelConfig(num_proposals=6, channels=16, hidden=4, grid=5,
                       stages=1, heads=2, sampling_ratio=1)
    model = build_model(mcfg, seed=0)
    summary = tr.evaluate_model(model, data, thresholds=(0.5, 0.75))
    assert set(summary["per_threshold"]) == {0.5, 0.75}


def test_train_toy_lr_schedule_fields():
    """Warm-up runs at lr/3 for the first warmup_iters; decay milestones
    multiply by 0.1 afterwards."""
    scfg = SyntheticSceneConfig(channels=16)
    data = make_dataset(1, base_seed=3, cfg=scfg)
    mcfg = ModelConfig(num_proposals=6, channels=16, hidden=4, grid=5,
                       stages=1, heads=2, sampling_ratio=1, init="random")
    tcfg = tr.TrainConfig(model=mcfg, iters=10, lr=9e-4, warmup_iters=4,
                          decay_iters=(6, 8), batch_size=1,
                          eval_interval=100, seed=5)
    _, log = tr.train_toy(tcfg, data)
    lrs = [r["lr"] for r in log]
    assert lrs[0] == pytest.approx(3e-4)
    assert lrs[4] == pytest.approx(9e-4)     # iter 5: warm-up over
    assert lrs[6] == pytest.approx(9e-5)     # iter 7: past first milestone
    assert lrs[9] == pytest.approx(9e-6)     # iter 10: past both
