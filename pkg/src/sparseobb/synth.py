"""Synthetic scenes: ship layouts plus a pseudo feature pyramid.

There is no backbone here. Each pyramid level encodes a deterministic
function of the ship geometry: channel 0 is a smoothed rotated-rectangle
occupancy map (sigmoid of the signed boundary distance, softened at half
the level's stride), and the remaining channels are fixed positive
multiples of it, drawn once from a feature seed shared across scenes so a
single linear readout works on every scene. Clutter is additive Gaussian
noise. Everything is reproducible from the scene seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import iou_matrix
from .pooling import LEVEL_STRIDES, FeatureMap, FeaturePyramid
from .training import GroundTruthScene


@dataclass
class SyntheticSceneConfig:
    image_size: tuple = (256, 256)
    ship_count: tuple = (1, 4)
    length_range: tuple = (40.0, 110.0)     # long side, pixels
    aspect_range: tuple = (2.5, 5.0)        # length / width
    angle_range: tuple = (0.0, math.pi)
    clutter: float = 0.1                    # noise sigma
    channels: int = 256
    seed: int = 0
    feature_seed: int = 7                   # shared across scenes
    max_overlap_iou: float = 0.05
    max_attempts: int = 50
    dtype: str = "float32"

    def validate(self):
        if self.ship_count[0] < 0 or self.ship_count[0] > self.ship_count[1]:
            raise ValueError(f"bad ship count range: {self.ship_count}")
        if self.length_range[0] > self.length_range[1]:
            raise ValueError(f"bad length range: {self.length_range}")
        if self.channels < 1:
            raise ValueError("need at least one channel")
        for w in self.image_size:
            if w % LEVEL_STRIDES[-1] != 0:
                raise ValueError(f"image size {self.image_size} not divisible "
                                 f"by the coarsest stride {LEVEL_STRIDES[-1]}")
        return self


def channel_coefficients(channels: int, feature_seed: int) -> np.ndarray:
    """Per-channel occupancy multipliers in [0.5, 1.5], fixed per seed."""
    rng = np.random.default_rng(feature_seed)
    coef = rng.uniform(0.5, 1.5, size=channels)
    coef[0] = 1.0
    return coef


def sample_ship_boxes(cfg: SyntheticSceneConfig,
                      rng: np.random.Generator) -> np.ndarray:
    """Rejection-sample non-overlapping elongated boxes inside the image."""
    img_w, img_h = cfg.image_size
    k = int(rng.integers(cfg.ship_count[0], cfg.ship_count[1] + 1))
    boxes: list = []
    for _ in range(k):
        for _attempt in range(cfg.max_attempts):
            length = rng.uniform(*cfg.length_range)
            aspect = rng.uniform(*cfg.aspect_range)
            w, h = length, length / aspect
            theta = rng.uniform(*cfg.angle_range)
            margin = 0.5 * length
            cx = rng.uniform(min(margin, img_w / 2), max(img_w - margin, img_w / 2))
            cy = rng.uniform(min(margin, img_h / 2), max(img_h - margin, img_h / 2))
            cand = np.array([[cx, cy, w, h, theta]])
            if boxes:
                if iou_matrix(cand, np.array(boxes)).max() > cfg.max_overlap_iou:
                    continue
            boxes.append(cand[0])
            break
    return np.array(boxes).reshape(-1, 5)


def occupancy_map(boxes: np.ndarray, image_size, stride: int,
                  softness: float | None = None) -> np.ndarray:
    """Smoothed ship-interior indicator on one level's cell-center grid.

    Uses the Chebyshev-style inside distance max(|u|-w/2, |v|-h/2) in box
    coordinates, squashed by a sigmoid with width 0.5*stride; the max over
    ships keeps values in (0, 1) with ~1 deep inside any ship.
    """
    img_w, img_h = image_size
    gw, gh = img_w // stride, img_h // stride
    xs = (np.arange(gw) + 0.5) * stride
    ys = (np.arange(gh) + 0.5) * stride
    gx, gy = np.meshgrid(xs, ys)
    occ = np.zeros((gh, gw))
    soft = softness if softness is not None else 0.5 * stride
    for cx, cy, w, h, th in boxes:
        c, s = math.cos(th), math.sin(th)
        dx, dy = gx - cx, gy - cy
        u = c * dx + s * dy
        v = -s * dx + c * dy
        dist = np.maximum(np.abs(u) - w / 2, np.abs(v) - h / 2)
        occ = np.maximum(occ, 1.0 / (1.0 + np.exp(dist / soft)))
    return occ


def generate_synthetic_scene(cfg: SyntheticSceneConfig):
    """Returns (FeaturePyramid, GroundTruthScene), deterministic per seed."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    boxes = sample_ship_boxes(cfg, rng)
    coef = channel_coefficients(cfg.channels, cfg.feature_seed)
    dtype = np.float64 if cfg.dtype == "float64" else np.float32
    levels = []
    for stride in LEVEL_STRIDES:
        occ = occupancy_map(boxes, cfg.image_size, stride)
        feat = coef[:, None, None] * occ[None, :, :]
        if cfg.clutter > 0:
            feat = feat + rng.normal(0.0, cfg.clutter, size=feat.shape)
        levels.append(FeatureMap(feat.astype(dtype), stride))
    pyramid = FeaturePyramid(levels, tuple(cfg.image_size))
    scene = GroundTruthScene(boxes, tuple(cfg.image_size))
    return pyramid, scene


def make_dataset(num_scenes: int, base_seed: int = 0,
                 cfg: SyntheticSceneConfig | None = None) -> list:
    """num_scenes (pyramid, scene) pairs with consecutive seeds."""
    base = cfg or SyntheticSceneConfig()
    out = []
    for i in range(num_scenes):
        from dataclasses import replace
        out.append(generate_synthetic_scene(replace(base, seed=base_seed + i)))
    return out
