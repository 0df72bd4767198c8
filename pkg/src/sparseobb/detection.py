"""Background-aware sparse proposals and the stacked detection head.

Each proposal is a 5-parameter rotated box plus two learnable C-vectors
(object and background features). A stage pools both context views around
the current boxes, runs each view through its interaction head, fuses the
streams, and emits classification logits and box deltas. Inference returns
exactly N scored boxes; there is no suppression stage anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import boxops, nn, pooling
from .autodiff import Tensor
from .interaction import (FusionParams, InteractionHeadParams, fusion_head_forward,
                          fusion_init, interaction_head_forward,
                          interaction_head_init)
from .nn import LayerNormParams, LinearParams


@dataclass
class ModelConfig:
    num_proposals: int = 100
    channels: int = 256
    hidden: int = 64           # dynamic-mixing width
    grid: int = 7
    alpha: float = 13.0 / 7.0  # background extension factor
    stages: int = 6
    heads: int = 8
    num_classes: int = 1
    init: str = "center"       # center | random | grid
    fusion: str = "xattn"      # xattn | add | mul
    pooling: str = "dcp"       # dcp | separate
    sampling_ratio: int = 2
    dropout: float = 0.1
    key_from_values: bool = False
    orthogonal_decode: bool = False
    score_prior: float = 0.01  # initial positive rate encoded in the cls bias

    def validate(self):
        if self.stages < 1:
            raise ValueError("stack depth must be >= 1")
        if self.init not in ("center", "random", "grid"):
            raise ValueError(f"unknown init strategy: {self.init}")
        if self.fusion not in ("xattn", "add", "mul"):
            raise ValueError(f"unknown fusion variant: {self.fusion}")
        if self.pooling not in ("dcp", "separate"):
            raise ValueError(f"unknown pooling variant: {self.pooling}")
        return self


@dataclass
class BackgroundAwareProposals:
    """N rotated boxes, each with object and background feature vectors."""

    boxes: Tensor       # (N, 5) pixel units
    obj_feats: Tensor   # (N, C)
    bg_feats: Tensor    # (N, C)

    def __post_init__(self):
        n = self.boxes.shape[0]
        if self.obj_feats.shape[0] != n or self.bg_feats.shape[0] != n:
            raise ValueError("proposal fields disagree on N")

    @property
    def count(self) -> int:
        return self.boxes.shape[0]


def _strategy_boxes(strategy: str, n: int, image_w: float, image_h: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Initial box layout in pixel units for the given image size."""
    w0, h0 = image_w / 4.0, image_h / 2.0
    if strategy == "center":
        row = (image_w / 2.0, image_h / 2.0, w0, h0, math.pi / 4)
        return np.tile(row, (n, 1)).astype(np.float64)
    if strategy == "grid":
        k = math.ceil(math.sqrt(n))
        boxes = []
        for iy in range(k):
            for ix in range(k):
                if len(boxes) == n:
                    break
                boxes.append(((ix + 0.5) * image_w / k, (iy + 0.5) * image_h / k,
                              w0, h0, math.pi / 4))
        return np.array(boxes, dtype=np.float64)
    if strategy == "random":
        cx = np.clip(rng.normal(image_w / 2, image_w / 4, n), 0.0, image_w)
        cy = np.clip(rng.normal(image_h / 2, image_h / 4, n), 0.0, image_h)
        w = np.clip(w0 * np.exp(rng.normal(0.0, 0.25, n)), 1e-3, image_w)
        h = np.clip(h0 * np.exp(rng.normal(0.0, 0.25, n)), 1e-3, image_h)
        th = rng.uniform(-math.pi / 2, math.pi / 2, n)
        return np.stack([cx, cy, w, h, th], axis=1)
    raise ValueError(f"unknown init strategy: {strategy}")


def init_proposals(strategy: str, n: int, image_w: float, image_h: float,
                   rng_seed: int = 0, channels: int = 256,
                   dtype=np.float64) -> BackgroundAwareProposals:
    """Build a learnable proposal set for one image size."""
    if n < 1:
        raise ValueError("need at least one proposal")
    rng = np.random.default_rng(rng_seed)
    boxes = _strategy_boxes(strategy, n, image_w, image_h, rng).astype(dtype)
    bound = math.sqrt(6.0 / (n + channels))
    obj = rng.uniform(-bound, bound, size=(n, channels)).astype(dtype)
    bg = rng.uniform(-bound, bound, size=(n, channels)).astype(dtype)
    return BackgroundAwareProposals(
        Tensor(boxes, requires_grad=True),
        Tensor(obj, requires_grad=True),
        Tensor(bg, requires_grad=True))


@dataclass
class DetectionHeadParams:
    obj_head: InteractionHeadParams
    bg_head: InteractionHeadParams
    fusion: FusionParams
    cls_hidden: LinearParams
    cls_norm: LayerNormParams
    cls_out: LinearParams   # C -> num_classes
    reg_hidden: LinearParams
    reg_norm: LayerNormParams
    reg_out: LinearParams   # C -> 5


def detection_head_init(rng: np.random.Generator, cfg: ModelConfig,
                        dtype=np.float64) -> DetectionHeadParams:
    c = cfg.channels
    cls_out = nn.linear_init(rng, c, cfg.num_classes, dtype)
    # bias set so sigmoid(logit) starts at the configured prior, keeping the
    # focal loss from being swamped by the N-to-few negative imbalance
    prior = cfg.score_prior
    cls_out.bias.data = np.full(cfg.num_classes,
                                -math.log((1.0 - prior) / prior), dtype=dtype)
    reg_out = nn.linear_init(rng, c, 5, dtype)
    # zero deltas at init: stage outputs start at the proposal boxes
    reg_out.weight.data = np.zeros_like(reg_out.weight.data)
    return DetectionHeadParams(
        obj_head=interaction_head_init(rng, c, cfg.hidden, cfg.grid, cfg.heads,
                                       cfg.dropout, dtype),
        bg_head=interaction_head_init(rng, c, cfg.hidden, cfg.grid, cfg.heads,
                                      cfg.dropout, dtype),
        fusion=fusion_init(rng, c, cfg.heads, cfg.fusion, cfg.dropout,
                           cfg.key_from_values, dtype),
        cls_hidden=nn.linear_init(rng, c, c, dtype),
        cls_norm=nn.layer_norm_init(c, dtype),
        cls_out=cls_out,
        reg_hidden=nn.linear_init(rng, c, c, dtype),
        reg_norm=nn.layer_norm_init(c, dtype),
        reg_out=reg_out)


@dataclass
class ModelParams:
    """Learnable state: normalized initial proposals plus the head stack.

    Initial boxes are stored against a unit image (cx, cy, w, h in [0, 1],
    angle raw) and scaled to pixels per scene, so one model serves any
    image size.
    """

    config: ModelConfig
    init_boxes: Tensor  # (N, 5) normalized
    init_obj: Tensor    # (N, C)
    init_bg: Tensor     # (N, C)
    stages: list = field(default_factory=list)


def build_model(cfg: ModelConfig, dtype=np.float64, seed: int = 0) -> ModelParams:
    cfg.validate()
    rng = np.random.default_rng(seed)
    props = init_proposals(cfg.init, cfg.num_proposals, 1.0, 1.0,
                           rng_seed=seed, channels=cfg.channels, dtype=dtype)
    stages = [detection_head_init(rng, cfg, dtype) for _ in range(cfg.stages)]
    return ModelParams(cfg, props.boxes, props.obj_feats, props.bg_feats, stages)


@dataclass
class Detections:
    """Exactly N scored boxes; `keep` is a display hint, never a filter."""

    boxes: np.ndarray   # (N, 5) canonical
    scores: np.ndarray  # (N,) in [0, 1]
    keep: np.ndarray | None = None


def _pool(pyr: pooling.FeaturePyramid, boxes_np: np.ndarray, cfg: ModelConfig):
    if cfg.pooling == "dcp":
        return pooling.dual_context_pool(pyr, boxes_np, cfg.alpha, cfg.grid,
                                         cfg.sampling_ratio)
    return pooling.separate_pool(pyr, boxes_np, cfg.alpha, cfg.grid,
                                 cfg.sampling_ratio)


def detection_head_forward(pyr: pooling.FeaturePyramid,
                           props: BackgroundAwareProposals,
                           params: DetectionHeadParams,
                           cfg: ModelConfig,
                           mode: str = "eval",
                           rng: np.random.Generator | None = None):
    """One stage: pool, interact, fuse, classify, regress, decode.

    Returns (logits (N, num_classes), boxes Tensor (N, 5), next_obj, next_bg).
    Pooling reads box geometry as a constant (no box gradient through the
    sampling matrices); the decode is differentiable in both the deltas and
    the incoming boxes.
    """
    boxes_np = props.boxes.data.astype(np.float64)
    pooled = _pool(pyr, boxes_np, cfg)
    f_obj, _ = interaction_head_forward(props.obj_feats, pooled.obj,
                                        params.obj_head, mode, rng)
    f_bg, _ = interaction_head_forward(props.bg_feats, pooled.bg,
                                       params.bg_head, mode, rng)
    fused = fusion_head_forward(f_obj, f_bg, params.fusion, mode, rng)
    cls_h = ad.relu(nn.layer_norm(nn.linear(fused, params.cls_hidden),
                                  params.cls_norm))
    logits = nn.linear(cls_h, params.cls_out)
    reg_h = ad.relu(nn.layer_norm(nn.linear(fused, params.reg_hidden),
                                  params.reg_norm))
    deltas = nn.linear(reg_h, params.reg_out)
    new_boxes = boxops.canonicalize(
        boxops.decode_tensor(props.boxes, deltas, cfg.orthogonal_decode))
    return logits, new_boxes, f_obj, f_bg


def scaled_init_boxes(model: ModelParams, image_w: float, image_h: float) -> Tensor:
    scale = np.array([[image_w, image_h, image_w, image_h, 1.0]],
                     dtype=model.init_boxes.data.dtype)
    return boxops.canonicalize(ad.mul(model.init_boxes, Tensor(scale)))


def pipeline_forward(pyr: pooling.FeaturePyramid, model: ModelParams,
                     mode: str = "eval",
                     rng: np.random.Generator | None = None):
    """Run all stages. Returns (per-stage [(logits, boxes)], Detections).

    Stage t consumes stage t-1 boxes (detached: box gradients do not cross
    stage boundaries) and the carried feature streams (not detached). The
    first stage consumes the learnable proposals, so their boxes receive
    gradient through the first decode.
    """
    w, h = pyr.image_size
    boxes = scaled_init_boxes(model, w, h)
    obj, bg = model.init_obj, model.init_bg
    cfg = model.config
    per_stage = []
    for params in model.stages:
        props = BackgroundAwareProposals(boxes, obj, bg)
        logits, new_boxes, obj, bg = detection_head_forward(
            pyr, props, params, cfg, mode, rng)
        per_stage.append((logits, new_boxes))
        boxes = new_boxes.detach()
    final_logits, final_boxes = per_stage[-1]
    scores = _sigmoid_np(final_logits.data[:, 0])
    dets = Detections(final_boxes.data.astype(np.float64).copy(),
                      scores.astype(np.float64))
    return per_stage, dets


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def infer(pyr: pooling.FeaturePyramid, model: ModelParams,
          score_threshold: float | None = None) -> Detections:
    """Eval-mode forward. All N detections are returned; a threshold only
    marks the `keep` flags (evaluation consumes the full set)."""
    with_no_tape = pipeline_forward(pyr, model, mode="eval")
    _, dets = with_no_tape
    if score_threshold is not None:
        dets.keep = dets.scores >= score_threshold
    return dets
