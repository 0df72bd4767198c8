"""Oriented-box geometry: canonical form, corners, exact IoU, box decode.

Boxes are (cx, cy, w, h, theta): center, side lengths, rotation in radians,
counter-clockwise from the +x axis. Canonical form restricts theta to
[0, pi/2) by exchanging the roles of w and h; all geometry here is exact
up to float rounding (no grid discretization).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# absolute area tolerance (px^2) below which intersections count as empty
AREA_EPS = 1e-12


@dataclass(frozen=True)
class OrientedBox:
    cx: float
    cy: float
    w: float
    h: float
    theta: float  # radians, CCW from +x

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h, self.theta], dtype=np.float64)

    @property
    def area(self) -> float:
        return self.w * self.h


def normalize_box(cx: float, cy: float, w: float, h: float, theta: float) -> OrientedBox:
    """Canonicalize to theta in [0, pi/2), swapping w/h when needed.

    A rectangle and its (w, h, theta+pi/2) -> (h, w) relabeling cover the
    same point set, as does any theta shift by pi. The representative with
    theta in [0, pi/2) is unique for w != h; idempotent in all cases.
    """
    if w < 0 or h < 0:
        raise ValueError(f"negative box side: w={w}, h={h}")
    t = math.fmod(theta, math.pi)
    if t < 0:
        t += math.pi
    if t >= math.pi:  # tiny negative t rounds up to pi exactly
        t = 0.0
    if t >= math.pi / 2:
        w, h = h, w
        t -= math.pi / 2
    return OrientedBox(float(cx), float(cy), float(w), float(h), float(t))


def normalize_array(boxes: np.ndarray) -> np.ndarray:
    """Vectorized canonicalization of an (N, 5) box array."""
    boxes = np.asarray(boxes, dtype=np.float64)
    out = boxes.copy()
    t = np.mod(out[:, 4], np.pi)
    t = np.where(t >= np.pi, 0.0, t)  # rounding guard, same as normalize_box
    swap = t >= np.pi / 2
    out[swap, 2], out[swap, 3] = boxes[swap, 3], boxes[swap, 2]
    t = np.where(swap, t - np.pi / 2, t)
    out[:, 4] = t
    return out


def box_corners(box) -> np.ndarray:
    """Return the 4 corners, CCW starting from the (+w/2, +h/2) corner.

    Accepts an OrientedBox or a length-5 sequence. Output is (4, 2) float64.
    """
    if isinstance(box, OrientedBox):
        cx, cy, w, h, theta = box.cx, box.cy, box.w, box.h, box.theta
    else:
        cx, cy, w, h, theta = (float(v) for v in box)
    c, s = math.cos(theta), math.sin(theta)
    hw, hh = 0.5 * w, 0.5 * h
    local = ((hw, hh), (-hw, hh), (-hw, -hh), (hw, -hh))
    return np.array([(cx + c * x - s * y, cy + s * x + c * y) for x, y in local])


def corners_batch(boxes: np.ndarray) -> np.ndarray:
    """(N, 5) boxes -> (N, 4, 2) corner arrays, same ordering as box_corners."""
    boxes = np.asarray(boxes, dtype=np.float64)
    cx, cy, w, h, th = boxes.T
    c, s = np.cos(th), np.sin(th)
    hw, hh = 0.5 * w, 0.5 * h
    lx = np.stack([hw, -hw, -hw, hw], axis=1)
    ly = np.stack([hh, hh, -hh, -hh], axis=1)
    x = cx[:, None] + c[:, None] * lx - s[:, None] * ly
    y = cy[:, None] + s[:, None] * lx + c[:, None] * ly
    return np.stack([x, y], axis=2)


def polygon_area(poly) -> float:
    """Signed shoelace area (positive for CCW vertex order)."""
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return 0.5 * acc


def clip_polygon(subject, clipper) -> list[tuple[float, float]]:
    """Sutherland-Hodgman clip of `subject` against convex CCW `clipper`."""
    output = [tuple(p) for p in subject]
    m = len(clipper)
    for i in range(m):
        if not output:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % m]
        ex, ey = bx - ax, by - ay
        input_list = output
        output = []
        n = len(input_list)
        for j in range(n):
            px, py = input_list[j]
            qx, qy = input_list[(j + 1) % n]
            # signed side: > 0 inside the half-plane left of a->b
            sp = ex * (py - ay) - ey * (px - ax)
            sq = ex * (qy - ay) - ey * (qx - ax)
            if sp >= 0.0:
                output.append((px, py))
            if (sp >= 0.0) != (sq >= 0.0):
                denom = sp - sq
                if denom != 0.0:
                    t = sp / denom
                    output.append((px + t * (qx - px), py + t * (qy - py)))
    return output


def intersection_area(box_a, box_b) -> float:
    """Exact overlap area of two oriented boxes."""
    pa = box_corners(box_a)
    pb = box_corners(box_b)
    inter = clip_polygon(pa.tolist(), pb.tolist())
    area = abs(polygon_area(inter))
    return 0.0 if area < AREA_EPS else area


def rotated_iou(box_a, box_b) -> float:
    """Intersection over union for two oriented boxes (exact polygon clip)."""
    if isinstance(box_a, OrientedBox):
        area_a = box_a.area
    else:
        area_a = float(box_a[2]) * float(box_a[3])
    if isinstance(box_b, OrientedBox):
        area_b = box_b.area
    else:
        area_b = float(box_b[2]) * float(box_b[3])
    inter = intersection_area(box_a, box_b)
    union = area_a + area_b - inter
    if union < AREA_EPS:
        return 0.0
    return inter / union


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise rotated IoU, (N, 5) x (M, 5) -> (N, M).

    A circumradius prefilter skips the polygon clip for pairs whose centers
    are too far apart to overlap.
    """
    boxes_a = np.asarray(boxes_a, dtype=np.float64)
    boxes_b = np.asarray(boxes_b, dtype=np.float64)
    n, m = len(boxes_a), len(boxes_b)
    out = np.zeros((n, m))
    if n == 0 or m == 0:
        return out
    ra = 0.5 * np.hypot(boxes_a[:, 2], boxes_a[:, 3])
    rb = 0.5 * np.hypot(boxes_b[:, 2], boxes_b[:, 3])
    dist = np.hypot(boxes_a[:, None, 0] - boxes_b[None, :, 0],
                    boxes_a[:, None, 1] - boxes_b[None, :, 1])
    candidates = dist <= ra[:, None] + rb[None, :]
    for i in range(n):
        for j in range(m):
            if candidates[i, j]:
                out[i, j] = rotated_iou(boxes_a[i], boxes_b[j])
    return out


def extend_box(box, alpha: float) -> OrientedBox:
    """Scale both sides by `alpha` about the center, keeping the angle.

    The extended region is the pooling footprint for background context;
    alpha=13/7 makes the central 7x7 of a 13x13 grid cover the object.
    """
    if isinstance(box, OrientedBox):
        return OrientedBox(box.cx, box.cy, box.w * alpha, box.h * alpha, box.theta)
    cx, cy, w, h, theta = (float(v) for v in box)
    return OrientedBox(cx, cy, w * alpha, h * alpha, theta)


def decode_deltas(proposals: np.ndarray, deltas: np.ndarray,
                  orthogonal: bool = False,
                  normalize: bool = True) -> np.ndarray:
    """Apply predicted offsets to proposal boxes.

    Center shifts are expressed in a proposal-aligned frame:

        x' = x + dx * w * cos(t) + dy * h * sin(t)
        y' = y + dx * w * sin(t) + dy * h * cos(t)

    Note the +sin in both cross terms: the y update uses the same sign as
    the x update, so the map is not a rotation unless `orthogonal` is set
    (which flips the x cross term to -sin, giving the usual rotated frame).
    Sizes update multiplicatively (log-space deltas, clamped to +-20),
    the angle additively. Output is canonicalized unless `normalize=False`.
    """
    proposals = np.asarray(proposals, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    x, y, w, h, t = (proposals[:, i] for i in range(5))
    dx, dy, dw, dh, dt = (deltas[:, i] for i in range(5))
    c, s = np.cos(t), np.sin(t)
    if orthogonal:
        nx = x + dx * w * c - dy * h * s
    else:
        nx = x + dx * w * c + dy * h * s
    ny = y + dx * w * s + dy * h * c
    nw = w * np.exp(np.clip(dw, -20.0, 20.0))
    nh = h * np.exp(np.clip(dh, -20.0, 20.0))
    nt = t + dt
    out = np.stack([nx, ny, nw, nh, nt], axis=1)
    return normalize_array(out) if normalize else out


def boxes_to_aabb(boxes: np.ndarray) -> np.ndarray:
    """Axis-aligned hull of each oriented box: (N, 4) as x0, y0, x1, y1."""
    corners = corners_batch(np.asarray(boxes, dtype=np.float64))
    x0 = corners[:, :, 0].min(axis=1)
    y0 = corners[:, :, 1].min(axis=1)
    x1 = corners[:, :, 0].max(axis=1)
    y1 = corners[:, :, 1].max(axis=1)
    return np.stack([x0, y0, x1, y1], axis=1)
