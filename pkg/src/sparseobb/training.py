"""Set-prediction training: losses, one-to-one matching, toy training loop.

Every stage of the stacked head is matched to the ground truth independently
(deep supervision). Matched predictions receive classification, L1, and IoU
terms; unmatched ones only the negative classification term. The sum over
stages is normalized once by the number of matched pairs in the batch.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.optimize

from . import autodiff as ad
from . import boxops, metrics, nn
from .autodiff import Tensor
from .detection import ModelConfig, ModelParams, build_model, pipeline_forward
from .geometry import iou_matrix, normalize_array

FOCAL_GAMMA = 2.0
FOCAL_ALPHA = 0.25
LOG_FLOOR = 1e-12


@dataclass
class LossWeights:
    lambda_cls: float = 2.0
    lambda_l1: float = 5.0
    lambda_iou: float = 2.0

    def __post_init__(self):
        if min(self.lambda_cls, self.lambda_l1, self.lambda_iou) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class GroundTruthScene:
    boxes: np.ndarray          # (M, 5) canonical
    image_size: tuple          # (W, H)

    def __post_init__(self):
        self.boxes = normalize_array(np.asarray(self.boxes, dtype=np.float64).reshape(-1, 5))


@dataclass
class MatchResult:
    pairs: list                 # [(prediction index, gt index)] sorted by gt
    unmatched_predictions: list

    @property
    def total_cost(self):
        return self._total

    def __init__(self, pairs, unmatched_predictions, total=None):
        self.pairs = pairs
        self.unmatched_predictions = unmatched_predictions
        self._total = total


# ---------------------------------------------------------------------------
# scalar losses (numpy paths, used for cost matrices and reporting)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def focal_loss(logit, target: int,
               gamma: float = FOCAL_GAMMA, alpha: float = FOCAL_ALPHA):
    """Focal loss of a sigmoid-scored logit against a binary target."""
    p = sigmoid(logit)
    if target == 1:
        return -alpha * (1.0 - p) ** gamma * np.log(np.maximum(p, LOG_FLOOR))
    return -(1.0 - alpha) * p ** gamma * np.log(np.maximum(1.0 - p, LOG_FLOOR))


def l1_box_loss(pred, gt, image_w: float, image_h: float,
                periodic_angle: bool = False) -> float:
    """Size-normalized L1 between canonical boxes; angle scaled by pi."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    d_ang = abs(p[4] - g[4])
    if periodic_angle:
        d_ang = min(d_ang, math.pi / 2 - d_ang)
    return (abs(p[0] - g[0]) / image_w + abs(p[1] - g[1]) / image_h
            + abs(p[2] - g[2]) / image_w + abs(p[3] - g[3]) / image_h
            + d_ang / math.pi)


def iou_loss(pred, gt) -> float:
    from .geometry import rotated_iou
    return 1.0 - rotated_iou(pred, gt)


def matching_cost_matrix(logits: np.ndarray, boxes: np.ndarray,
                         gts: GroundTruthScene,
                         w: LossWeights = LossWeights(),
                         periodic_angle: bool = False) -> np.ndarray:
    """(N, M) assignment costs; unmatched handling happens in set_loss."""
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    boxes = np.asarray(boxes, dtype=np.float64)
    gt = gts.boxes
    n, m = len(boxes), len(gt)
    if m == 0:
        return np.zeros((n, 0))
    img_w, img_h = gts.image_size
    cls = w.lambda_cls * focal_loss(logits, 1)
    scale = np.array([1.0 / img_w, 1.0 / img_h, 1.0 / img_w, 1.0 / img_h])
    d = np.abs(boxes[:, None, :4] - gt[None, :, :4])
    l1 = (d * scale).sum(axis=2)
    d_ang = np.abs(boxes[:, None, 4] - gt[None, :, 4])
    if periodic_angle:
        d_ang = np.minimum(d_ang, math.pi / 2 - d_ang)
    l1 = l1 + d_ang / math.pi
    iou = iou_matrix(boxes, gt)
    return cls[:, None] + w.lambda_l1 * l1 + w.lambda_iou * (1.0 - iou)


# ---------------------------------------------------------------------------
# matching


def _fsum_total(cost: np.ndarray, rows, cols) -> float:
    return math.fsum(float(cost[i, j]) for i, j in zip(rows, cols))


def hungarian_match(cost: np.ndarray, canonical: bool = True) -> MatchResult:
    """Minimum-cost one-to-one assignment of ground truths to predictions.

    Wraps the Jonker-Volgenant solver. With `canonical=True` the result is
    additionally reduced to the lexicographically smallest optimal
    assignment (per ground-truth index, lowest prediction index that keeps
    the total optimal), which makes ties agree exactly with the exhaustive
    oracle. Training paths pass canonical=False; the extra solves only
    matter when distinct assignments share a total.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if not np.all(np.isfinite(cost)):
        raise ValueError("assignment cost matrix contains non-finite entries")
    n, m = cost.shape
    if m == 0:
        return MatchResult([], list(range(n)), 0.0)
    rows, cols = scipy.optimize.linear_sum_assignment(cost)
    best_total = _fsum_total(cost, rows, cols)
    assign = {int(j): int(i) for i, j in zip(rows, cols)}

    if canonical and n >= 1:
        big = 1.0 + np.abs(cost).sum() * 2  # forbidden-cell cost
        for j in sorted(assign):
            current = assign[j]
            for i in range(n):
                if i >= current:
                    break
                if any(oi == i for oj, oi in assign.items() if oj < j):
                    continue
                forced = cost.copy()
                # pin earlier decisions and the trial pair (i, j)
                for oj in assign:
                    if oj < j:
                        forced[:, oj] = big
                        forced[assign[oj], oj] = cost[assign[oj], oj]
                forced[:, j] = big
                forced[i, j] = cost[i, j]
                r2, c2 = scipy.optimize.linear_sum_assignment(forced)
                if _fsum_total(cost, r2, c2) == best_total and np.all(
                        forced[r2, c2] < big):
                    assign = {int(jj): int(ii) for ii, jj in zip(r2, c2)}
                    assign[j] = i
                    break

    pairs = sorted(((assign[j], j) for j in assign), key=lambda t: t[1])
    matched_preds = {i for i, _ in pairs}
    unmatched = [i for i in range(n) if i not in matched_preds]
    return MatchResult(pairs, unmatched, best_total)


def brute_force_match(cost: np.ndarray) -> MatchResult:
    """Exhaustive assignment oracle (first minimum in lexicographic order)."""
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    if min(n, m) > 8:
        raise ValueError("instance too large for exhaustive matching")
    if m == 0:
        return MatchResult([], list(range(n)), 0.0)
    count = 1
    for k in range(m):
        count *= (n - k)
        if count > 2_000_000:
            raise ValueError("instance too large for exhaustive matching")
    best, best_perm = None, None
    for perm in itertools.permutations(range(n), m):
        total = math.fsum(cost[perm[j], j] for j in range(m))
        if best is None or total < best:
            best, best_perm = total, perm
    pairs = [(best_perm[j], j) for j in range(m)]
    matched = set(best_perm)
    return MatchResult(pairs, [i for i in range(n) if i not in matched], best)


# ---------------------------------------------------------------------------
# differentiable set loss


def _focal_terms(logits_flat: Tensor, targets: np.ndarray,
                 gamma: float = FOCAL_GAMMA, alpha: float = FOCAL_ALPHA) -> Tensor:
    """Per-prediction focal loss tensor against a fixed 0/1 target vector."""
    p = ad.sigmoid(logits_flat)
    t = Tensor(targets.astype(logits_flat.dtype))
    pos = ad.mul(ad.mul(ad.pow_const(ad.sub(1.0, p), gamma),
                        ad.log(ad.clip(p, LOG_FLOOR, None))), -alpha)
    neg = ad.mul(ad.mul(ad.pow_const(p, gamma),
                        ad.log(ad.clip(ad.sub(1.0, p), LOG_FLOOR, None))),
                 -(1.0 - alpha))
    return ad.add(ad.mul(t, pos), ad.mul(ad.sub(1.0, t), neg))


def _l1_terms(sel_boxes: Tensor, gt: np.ndarray, image_w, image_h,
              periodic_angle: bool) -> Tensor:
    dt = sel_boxes.dtype
    scale = np.array([[1.0 / image_w, 1.0 / image_h,
                       1.0 / image_w, 1.0 / image_h]], dtype=dt)
    d4 = ad.mul(ad.absolute(ad.sub(sel_boxes[:, :4], Tensor(gt[:, :4].astype(dt)))),
                Tensor(scale))
    d_ang = ad.absolute(ad.sub(sel_boxes[:, 4], Tensor(gt[:, 4].astype(dt))))
    if periodic_angle:
        quarter = math.pi / 4
        d_ang = ad.sub(quarter, ad.absolute(ad.sub(d_ang, quarter)))
    return ad.add(ad.tsum(d4, axis=1), ad.mul(d_ang, 1.0 / math.pi))


def set_loss(batch_outputs: list, scenes: list,
             weights: LossWeights = LossWeights(),
             periodic_angle: bool = False,
             canonical_match: bool = False,
             frozen_matches: list | None = None):
    """Deep-supervised set loss over a batch of scenes.

    batch_outputs: per scene, the per-stage list of (logits, boxes) tensors
    from pipeline_forward. frozen_matches (per scene, per stage) bypasses
    matching, which keeps the loss a fixed differentiable function during
    gradient checks.

    Returns (loss Tensor, breakdown dict).
    """
    if len(batch_outputs) != len(scenes):
        raise ValueError("batch outputs and scenes disagree")
    if not batch_outputs or not batch_outputs[0]:
        raise ValueError("need at least one scene with one stage")

    matched_total = sum(len(s.boxes) for s in scenes)
    normalizer = max(matched_total, 1)

    terms = []
    log = {"cls": 0.0, "l1": 0.0, "iou": 0.0, "matched": matched_total}
    for scene_idx, (stage_outputs, scene) in enumerate(zip(batch_outputs, scenes)):
        img_w, img_h = scene.image_size
        for stage_idx, (logits, boxes) in enumerate(stage_outputs):
            n = logits.shape[0]
            flat = ad.reshape(logits, (n,))
            if frozen_matches is not None:
                match = frozen_matches[scene_idx][stage_idx]
            else:
                cost = matching_cost_matrix(flat.data, boxes.data, scene,
                                            weights, periodic_angle)
                match = hungarian_match(cost, canonical=canonical_match)
            targets = np.zeros(n)
            pred_idx = np.array([i for i, _ in match.pairs], dtype=np.intp)
            gt_idx = np.array([j for _, j in match.pairs], dtype=np.intp)
            targets[pred_idx] = 1.0
            cls_term = ad.mul(ad.tsum(_focal_terms(flat, targets)),
                              weights.lambda_cls / normalizer)
            terms.append(cls_term)
            log["cls"] += float(cls_term.data)
            if len(pred_idx):
                sel = ad.take_rows(boxes, pred_idx)
                gt = scene.boxes[gt_idx]
                l1_term = ad.mul(ad.tsum(_l1_terms(sel, gt, img_w, img_h,
                                                   periodic_angle)),
                                 weights.lambda_l1 / normalizer)
                iou_term = ad.mul(ad.tsum(ad.sub(1.0, boxops.iou_pairs(sel, gt))),
                                  weights.lambda_iou / normalizer)
                terms.append(l1_term)
                terms.append(iou_term)
                log["l1"] += float(l1_term.data)
                log["iou"] += float(iou_term.data)
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    log["total"] = float(total.data)
    return total, log


# ---------------------------------------------------------------------------
# toy training


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    iters: int = 2000
    lr: float = 7.5e-5
    warmup_iters: int = 50
    warmup_factor: float = 1.0 / 3.0
    batch_size: int = 2
    weight_decay: float = 1e-4
    grad_clip: float = 1.0
    seed: int = 0
    eval_interval: int = 100
    target_ap50: float | None = None   # stop early once reached
    time_limit: float | None = None    # wall-clock cap in seconds
    decay_iters: tuple = ()            # lr x0.1 after each; toy runs keep ()
    periodic_angle: bool = False
    dtype: str = "float32"
    log_path: str | None = None


def evaluate_model(model: ModelParams, dataset: list,
                   thresholds=(0.5,)) -> dict:
    """AP of eval-mode inference over a dataset of (pyramid, scene) pairs."""
    preds, gts = [], []
    for pyr, scene in dataset:
        _, dets = pipeline_forward(pyr, model, mode="eval")
        preds.append((dets.boxes, dets.scores))
        gts.append(scene.boxes)
    cfg = metrics.EvalConfig(iou_thresholds=tuple(thresholds))
    summary = metrics.coco_summary(preds, gts, cfg)
    return summary


def train_toy(config: TrainConfig, dataset: list,
              model: ModelParams | None = None):
    """Train on (FeaturePyramid, GroundTruthScene) pairs.

    Deterministic for a fixed config/seed. Aborts on non-finite loss;
    non-finite gradients skip the optimizer step but keep training.
    Returns (model, metrics log list).
    """
    if not dataset:
        raise ValueError("empty dataset")
    dtype = np.float64 if config.dtype == "float64" else np.float32
    if model is None:
        model = build_model(config.model, dtype=dtype, seed=config.seed)
    named = list(nn.named_tensors(model))
    state = nn.adam_init(named)
    rng = np.random.default_rng(config.seed + 1)
    order = []
    log: list[dict] = []
    log_file = open(config.log_path, "w") if config.log_path else None
    t0 = time.time()
    best_ap = 0.0
    try:
        for it in range(1, config.iters + 1):
            if len(order) < config.batch_size:
                order.extend(rng.permutation(len(dataset)).tolist())
            batch_ids = [order.pop(0) for _ in range(min(config.batch_size,
                                                         len(dataset)))]
            nn.zero_grads(named)
            outputs, scenes = [], []
            for sid in batch_ids:
                pyr, scene = dataset[sid]
                stage_outputs, _ = pipeline_forward(pyr, model, mode="train",
                                                    rng=rng)
                outputs.append(stage_outputs)
                scenes.append(scene)
            loss, parts = set_loss(outputs, scenes, config.weights,
                                   config.periodic_angle)
            if not math.isfinite(float(loss.data)):
                raise RuntimeError(
                    f"non-finite loss at iteration {it}: {parts}")
            loss.backward()
            lr = config.lr * (config.warmup_factor
                              if it <= config.warmup_iters else 1.0)
            lr *= 0.1 ** sum(1 for d in config.decay_iters if it > d)
            gnorm = nn.adam_step(named, state, lr,
                                 weight_decay=config.weight_decay,
                                 max_grad_norm=config.grad_clip)
            rec = {"iter": it, "loss": float(loss.data),
                   "cls": parts["cls"], "l1": parts["l1"], "iou": parts["iou"],
                   "grad_norm": float(gnorm), "lr": lr,
                   "time": round(time.time() - t0, 3)}
            if not math.isfinite(gnorm):
                rec["skipped_step"] = True
            if it % config.eval_interval == 0 or it == config.iters:
                summary = evaluate_model(model, dataset)
                rec["ap50"] = summary["per_threshold"][0.5]
                best_ap = max(best_ap, rec["ap50"])
            log.append(rec)
            if log_file:
                log_file.write(json.dumps(rec) + "\n")
                log_file.flush()
            if (config.target_ap50 is not None and "ap50" in rec
                    and rec["ap50"] >= config.target_ap50):
                break
            if (config.time_limit is not None
                    and time.time() - t0 > config.time_limit):
                rec["time_capped"] = True
                break
    finally:
        if log_file:
            log_file.close()
    return model, log
