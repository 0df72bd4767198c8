"""Differentiable oriented-box operations.

These ops put box math on the autodiff tape: delta decoding built from
primitives, canonicalization with branch-aware gradient routing, and exact
rotated IoU with an analytic Jacobian propagated through the polygon clip
(piecewise-smooth; the clipping topology is locally constant, so away from
degenerate contact configurations the gradient matches finite differences).
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import normalize_array


def decode_tensor(proposals, deltas, orthogonal: bool = False) -> Tensor:
    """Differentiable form of geometry.decode_deltas (no canonicalization).

    Gradients flow into both arguments; callers detach whichever side should
    be treated as constant.
    """
    proposals = ad.as_tensor(proposals)
    deltas = ad.as_tensor(deltas)
    x, y = proposals[:, 0], proposals[:, 1]
    w, h = proposals[:, 2], proposals[:, 3]
    t = proposals[:, 4]
    dx, dy = deltas[:, 0], deltas[:, 1]
    dw, dh = deltas[:, 2], deltas[:, 3]
    dt = deltas[:, 4]
    c, s = ad.cos(t), ad.sin(t)
    wx = ad.mul(dx, w)
    hy = ad.mul(dy, h)
    if orthogonal:
        nx = ad.add(x, ad.sub(ad.mul(wx, c), ad.mul(hy, s)))
    else:
        nx = ad.add(x, ad.add(ad.mul(wx, c), ad.mul(hy, s)))
    ny = ad.add(y, ad.add(ad.mul(wx, s), ad.mul(hy, c)))
    nw = ad.mul(w, ad.exp(ad.clip(dw, -20.0, 20.0)))
    nh = ad.mul(h, ad.exp(ad.clip(dh, -20.0, 20.0)))
    nt = ad.add(t, dt)
    cols = [ad.reshape(v, (-1, 1)) for v in (nx, ny, nw, nh, nt)]
    return ad.concat(cols, axis=1)


def canonicalize(boxes) -> Tensor:
    """Map (N, 5) boxes to theta in [0, pi/2), differentiably.

    The forward pass matches geometry.normalize_array. Backward: the angle
    reduction is a constant shift (gradient 1 a.e.); rows whose w/h swapped
    route the w gradient to h and vice versa.
    """
    boxes = ad.as_tensor(boxes)
    out_data = normalize_array(boxes.data)
    t = np.mod(boxes.data[:, 4], np.pi)
    t = np.where(t >= np.pi, 0.0, t)  # keep the swap mask in step with forward
    swapped = t >= np.pi / 2

    def backward(g):
        gi = g.copy()
        gi[swapped, 2], gi[swapped, 3] = g[swapped, 3], g[swapped, 2]
        ad._accum(boxes, gi)

    return ad._make(out_data.astype(boxes.dtype), (boxes,), backward)


# ---------------------------------------------------------------------------
# IoU with analytic gradient


def _corner_jacobians(box: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Corners (4, 2) and their Jacobians (4, 2, 5) w.r.t. (cx, cy, w, h, t)."""
    cx, cy, w, h, t = box
    c, s = math.cos(t), math.sin(t)
    corners = np.empty((4, 2))
    jac = np.zeros((4, 2, 5))
    signs = ((1, 1), (-1, 1), (-1, -1), (1, -1))
    for k, (sx, sy) in enumerate(signs):
        lx, ly = sx * 0.5 * w, sy * 0.5 * h
        corners[k] = (cx + c * lx - s * ly, cy + s * lx + c * ly)
        jac[k, 0] = (1.0, 0.0, c * sx * 0.5, -s * sy * 0.5, -s * lx - c * ly)
        jac[k, 1] = (0.0, 1.0, s * sx * 0.5, c * sy * 0.5, c * lx - s * ly)
    return corners, jac


def _clip_with_jacobian(verts, jacs, clipper: np.ndarray):
    """Sutherland-Hodgman clip carrying per-vertex Jacobians.

    Mirrors geometry.clip_polygon exactly (same inside test, same t), so the
    forward value agrees with the non-differentiable path to the last bit.
    """
    out_v = list(verts)
    out_j = list(jacs)
    m = len(clipper)
    for i in range(m):
        if not out_v:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % m]
        ex, ey = bx - ax, by - ay
        in_v, in_j = out_v, out_j
        out_v, out_j = [], []
        n = len(in_v)
        for k in range(n):
            p, jp = in_v[k], in_j[k]
            q, jq = in_v[(k + 1) % n], in_j[(k + 1) % n]
            sp = ex * (p[1] - ay) - ey * (p[0] - ax)
            sq = ex * (q[1] - ay) - ey * (q[0] - ax)
            if sp >= 0.0:
                out_v.append(p)
                out_j.append(jp)
            if (sp >= 0.0) != (sq >= 0.0):
                denom = sp - sq
                if denom != 0.0:
                    t = sp / denom
                    x = (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))
                    dsp = ex * jp[1] - ey * jp[0]
                    dsq = ex * jq[1] - ey * jq[0]
                    dt = (dsp * (sp - sq) - sp * (dsp - dsq)) / (denom * denom)
                    jx = jp + t * (jq - jp) + np.outer(
                        (q[0] - p[0], q[1] - p[1]), dt)
                    out_v.append(x)
                    out_j.append(jx)
    return out_v, out_j


def _area_with_grad(verts, jacs) -> tuple[float, np.ndarray]:
    """Signed shoelace area and its gradient w.r.t. the 5 box params."""
    n = len(verts)
    grad = np.zeros(5)
    if n < 3:
        return 0.0, grad
    area = 0.0
    for i in range(n):
        x0, y0 = verts[i]
        x1, y1 = verts[(i + 1) % n]
        j0, j1 = jacs[i], jacs[(i + 1) % n]
        area += x0 * y1 - x1 * y0
        grad += x0 * j1[1] + y1 * j0[0] - x1 * j0[1] - y0 * j1[0]
    return 0.5 * area, 0.5 * grad


def iou_with_grad(box: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Rotated IoU of `box` against fixed `target`, plus d IoU / d box.

    Both are length-5 arrays. Returns (iou, grad) where grad is (5,).
    """
    box = np.asarray(box, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    corners, jac = _corner_jacobians(box)
    from .geometry import box_corners
    clipper = box_corners(target)
    verts, jacs = _clip_with_jacobian(
        [tuple(c) for c in corners], [jac[k] for k in range(4)], clipper)
    inter, d_inter = _area_with_grad(verts, jacs)
    if inter < 0:  # orientation guard; CCW in, CCW out
        inter, d_inter = -inter, -d_inter
    area_a = box[2] * box[3]
    area_b = target[2] * target[3]
    d_area_a = np.array([0.0, 0.0, box[3], box[2], 0.0])
    union = area_a + area_b - inter
    if union < 1e-12 or inter < 1e-12:
        return 0.0, np.zeros(5)
    d_union = d_area_a - d_inter
    iou = inter / union
    grad = (d_inter * union - inter * d_union) / (union * union)
    return iou, grad


def iou_pairs(pred, targets: np.ndarray) -> Tensor:
    """Elementwise IoU between predicted boxes (M, 5) and fixed targets.

    Differentiable in `pred` via the analytic clipped-polygon Jacobian.
    """
    pred = ad.as_tensor(pred)
    targets = np.asarray(targets, dtype=np.float64)
    m = pred.shape[0]
    vals = np.zeros(m, dtype=pred.dtype)
    grads = np.zeros((m, 5))
    for i in range(m):
        vals[i], grads[i] = iou_with_grad(
            pred.data[i].astype(np.float64), targets[i])

    def backward(g):
        ad._accum(pred, (g[:, None] * grads).astype(pred.dtype))

    return ad._make(vals, (pred,), backward)
