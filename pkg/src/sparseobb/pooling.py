"""Rotated RoI pooling over a feature pyramid.

Pooling is linear in the feature values for fixed box geometry, so every
pooled output is expressed as a sparse bilinear-sampling matrix applied to
the flattened level features. Dual-context pooling samples one enlarged grid
per proposal and derives both the object and the background views from it
with small constant matrices (center crop; center-masked mean-fill followed
by a bilinear resize). That construction keeps the two views on the same
pyramid level by construction and costs one sparse gather per proposal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from . import autodiff as ad
from .autodiff import Tensor

LEVEL_STRIDES = (4, 8, 16, 32)
# level index k for a box of scale sqrt(w*h): k = 4 + log2(scale/224), in 2..5
CANONICAL_LEVEL = 4
CANONICAL_SCALE = 224.0


@dataclass
class FeatureMap:
    """One pyramid level: (C, H, W) features at a fixed pixel stride."""

    data: Tensor
    stride: int
    _flat: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.data, Tensor):
            self.data = Tensor(np.asarray(self.data))
        if self.data.ndim != 3:
            raise ValueError(f"feature map must be (C, H, W), got {self.data.shape}")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def flat_tensor(self) -> Tensor:
        """Features as (H*W, C), the layout sparse sampling matrices act on."""
        c, h, w = self.data.shape
        if self.data.requires_grad:
            return ad.swapaxes(ad.reshape(self.data, (c, h * w)), 0, 1)
        if self._flat is None:
            self._flat = np.ascontiguousarray(
                self.data.data.reshape(c, h * w).T)
        return Tensor(self._flat)


@dataclass
class FeaturePyramid:
    levels: list
    image_size: tuple  # (width, height) in pixels

    def __post_init__(self):
        chans = {fm.channels for fm in self.levels}
        if len(chans) > 1:
            raise ValueError(f"levels disagree on channel count: {chans}")

    @property
    def channels(self) -> int:
        return self.levels[0].channels


def assign_levels(boxes: np.ndarray, num_levels: int = 4) -> np.ndarray:
    """Pyramid level index (0-based, level 0 = stride 4) per box.

    Scale rule: k = floor(4 + log2(sqrt(w*h) / 224)) clamped to [2, 5];
    the returned index is k - 2. Degenerate boxes land on the finest level.
    """
    boxes = np.asarray(boxes, dtype=np.float64)
    scale = np.sqrt(boxes[:, 2] * boxes[:, 3])
    with np.errstate(divide="ignore"):
        k = np.floor(CANONICAL_LEVEL + np.log2(scale / CANONICAL_SCALE))
    k = np.clip(k, 2, 2 + num_levels - 1)
    return (k - 2).astype(np.intp)


def roi_align_matrix(boxes: np.ndarray, grid: int, ratio: int, stride: int,
                     height: int, width: int) -> scipy.sparse.csr_matrix:
    """Bilinear sampling matrix for rotated boxes on one feature level.

    Rows are (box, bin) pairs in row-major bin order (grid x grid, first
    axis along box height); columns index the flattened (H, W) level cells.
    Each bin averages ratio^2 interior sample points; every sample reads its
    four neighboring cell centers (cell (ix, iy) has its center at
    ((ix + 0.5) * stride, (iy + 0.5) * stride)); neighbors outside the map
    contribute zero, so rows of partially visible boxes sum below one.
    """
    boxes = np.asarray(boxes, dtype=np.float64)
    n = len(boxes)
    s, r = grid, ratio
    iy, sy, jx, sx = np.meshgrid(np.arange(s), np.arange(r),
                                 np.arange(s), np.arange(r), indexing="ij")
    v_frac = ((iy + (sy + 0.5) / r) / s - 0.5).reshape(-1)
    u_frac = ((jx + (sx + 0.5) / r) / s - 0.5).reshape(-1)
    bin_of_point = (iy * s + jx).reshape(-1)

    cx, cy, w, h, th = boxes.T
    c, si = np.cos(th), np.sin(th)
    u = u_frac[None, :] * w[:, None]   # along box width
    v = v_frac[None, :] * h[:, None]   # along box height
    px = cx[:, None] + c[:, None] * u - si[:, None] * v
    py = cy[:, None] + si[:, None] * u + c[:, None] * v

    gx = px / stride - 0.5
    gy = py / stride - 0.5
    x0 = np.floor(gx)
    y0 = np.floor(gy)
    tx, ty = gx - x0, gy - y0
    x0 = x0.astype(np.intp)
    y0 = y0.astype(np.intp)

    rows = np.arange(n)[:, None] * (s * s) + bin_of_point[None, :]
    parts_r, parts_c, parts_w = [], [], []
    taps = ((0, 0, (1 - tx) * (1 - ty)), (1, 0, tx * (1 - ty)),
            (0, 1, (1 - tx) * ty), (1, 1, tx * ty))
    for dx, dy, wgt in taps:
        xs, ys = x0 + dx, y0 + dy
        ok = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
        parts_r.append(rows[ok])
        parts_c.append((ys * width + xs)[ok])
        parts_w.append((wgt / (r * r))[ok])
    mat = scipy.sparse.coo_matrix(
        (np.concatenate(parts_w),
         (np.concatenate(parts_r), np.concatenate(parts_c))),
        shape=(n * s * s, height * width)).tocsr()
    mat.sum_duplicates()
    return mat


def pool_rois(pyramid: FeaturePyramid, boxes: np.ndarray, levels: np.ndarray,
              grid: int = 7, ratio: int = 2) -> Tensor:
    """Pool each box from its assigned level. Returns (N, grid^2, C)."""
    boxes = np.asarray(boxes, dtype=np.float64)
    n = len(boxes)
    chan = pyramid.channels
    pieces, order = [], []
    for li, fm in enumerate(pyramid.levels):
        mask = levels == li
        if not mask.any():
            continue
        idx = np.nonzero(mask)[0]
        mat = roi_align_matrix(boxes[mask], grid, ratio, fm.stride,
                               fm.height, fm.width)
        flat = fm.flat_tensor()
        if mat.dtype != flat.dtype:
            mat = mat.astype(flat.dtype)
        pooled = ad.sparse_gather(mat, flat)
        pieces.append(ad.reshape(pooled, (len(idx), grid * grid, chan)))
        order.append(idx)
    if not pieces:
        dtype = pyramid.levels[0].data.dtype
        return Tensor(np.zeros((0, grid * grid, chan), dtype=dtype))
    cat = pieces[0] if len(pieces) == 1 else ad.concat(pieces, axis=0)
    perm = np.concatenate(order)
    if np.array_equal(perm, np.arange(n)):
        return cat
    return ad.take_rows(cat, np.argsort(perm))


# ---------------------------------------------------------------------------
# constant mixing matrices for dual-context pooling


def crop_matrix(grid: int, context_grid: int) -> np.ndarray:
    """(grid^2, context_grid^2) selector of the centered grid x grid block.

    With context_grid = alpha * grid the central block of the enlarged-box
    grid tiles the original box exactly, so cropping equals pooling the box
    directly (same sample points, same level).
    """
    if (context_grid - grid) % 2 != 0:
        raise ValueError("context grid must keep the center crop symmetric")
    off = (context_grid - grid) // 2
    m = np.zeros((grid * grid, context_grid * context_grid))
    for i in range(grid):
        for j in range(grid):
            m[i * grid + j, (i + off) * context_grid + (j + off)] = 1.0
    return m


def center_mask(grid: int, context_grid: int) -> np.ndarray:
    """Boolean (context_grid, context_grid), True on the central grid block."""
    off = (context_grid - grid) // 2
    m = np.zeros((context_grid, context_grid), dtype=bool)
    m[off:off + grid, off:off + grid] = True
    return m


def replace_center_matrix(grid: int, context_grid: int) -> np.ndarray:
    """(A^2, A^2) map: identity outside the center; center cells become the
    mean of the outer ring. Columns of central cells are all zero, so object
    content cannot leak into the background view."""
    a2 = context_grid * context_grid
    inner = center_mask(grid, context_grid).reshape(-1)
    outer = ~inner
    n_outer = int(outer.sum())
    m = np.zeros((a2, a2))
    m[np.ix_(outer, outer)] = np.eye(n_outer)
    m[np.ix_(inner, outer)] = 1.0 / n_outer
    return m


def resize_matrix(grid: int, context_grid: int) -> np.ndarray:
    """(grid^2, A^2) bilinear downsample of an A x A grid to grid x grid.

    Source coordinate per output cell: (dst + 0.5) * A / grid - 0.5,
    clamped to [0, A - 1].
    """
    a = context_grid
    m = np.zeros((grid * grid, a * a))
    coords = np.clip((np.arange(grid) + 0.5) * a / grid - 0.5, 0.0, a - 1.0)
    lo = np.minimum(np.floor(coords).astype(int), a - 2) if a > 1 else np.zeros(grid, int)
    t = coords - lo
    for i in range(grid):
        for j in range(grid):
            for dy, wy in ((0, 1 - t[i]), (1, t[i])):
                for dx, wx in ((0, 1 - t[j]), (1, t[j])):
                    m[i * grid + j, (lo[i] + dy) * a + (lo[j] + dx)] += wy * wx
    return m


def background_matrix(grid: int, context_grid: int) -> np.ndarray:
    """Fixed (grid^2, A^2) map from context features to the background view."""
    return resize_matrix(grid, context_grid) @ replace_center_matrix(grid, context_grid)


# ---------------------------------------------------------------------------
# pooling entry points


@dataclass
class DualContextFeatures:
    """Pooled object and background views, (N, grid^2, C) each."""

    obj: Tensor
    bg: Tensor
    obj_levels: np.ndarray
    bg_levels: np.ndarray

    @property
    def levels(self) -> np.ndarray:
        """Shared level per proposal; only defined when the views agree."""
        if not np.array_equal(self.obj_levels, self.bg_levels):
            raise ValueError("object/background views were pooled from different levels")
        return self.obj_levels


def extend_boxes(boxes: np.ndarray, alpha: float) -> np.ndarray:
    out = np.asarray(boxes, dtype=np.float64).copy()
    out[:, 2:4] *= alpha
    return out


def context_grid_for(alpha: float, grid: int) -> int:
    a = int(round(alpha * grid))
    if (a - grid) % 2 != 0:
        raise ValueError(
            f"alpha={alpha} gives context grid {a} with no centered {grid}x{grid} crop")
    return a


def dual_context_pool(pyramid: FeaturePyramid, boxes: np.ndarray,
                      alpha: float = 13.0 / 7.0, grid: int = 7,
                      ratio: int = 2) -> DualContextFeatures:
    """Pool object and background views from one enlarged-box grid.

    The enlarged box (sides scaled by alpha) is sampled on an A x A grid,
    A = round(alpha * grid). The object view is the centered crop; the
    background view masks the center with the outer-ring mean and resizes
    to grid x grid. Level assignment uses the enlarged box, so both views
    come from the same level for every proposal.
    """
    boxes = np.asarray(boxes, dtype=np.float64)
    ext = extend_boxes(boxes, alpha)
    levels = assign_levels(ext, len(pyramid.levels))
    a = context_grid_for(alpha, grid)
    ctx = pool_rois(pyramid, ext, levels, grid=a, ratio=ratio)
    dtype = ctx.dtype
    obj = ad.matmul(Tensor(crop_matrix(grid, a).astype(dtype)), ctx)
    bg = ad.matmul(Tensor(background_matrix(grid, a).astype(dtype)), ctx)
    return DualContextFeatures(obj, bg, levels, levels.copy())


def separate_pool(pyramid: FeaturePyramid, boxes: np.ndarray,
                  alpha: float = 13.0 / 7.0, grid: int = 7,
                  ratio: int = 2) -> DualContextFeatures:
    """Ablation variant: pool the two views independently.

    The object view samples the box at the level of the box itself; the
    background view samples the enlarged box at the level of the enlarged
    box. The views can therefore land on different levels, and the
    background grid re-covers the object region (no masking).
    """
    boxes = np.asarray(boxes, dtype=np.float64)
    ext = extend_boxes(boxes, alpha)
    obj_levels = assign_levels(boxes, len(pyramid.levels))
    bg_levels = assign_levels(ext, len(pyramid.levels))
    obj = pool_rois(pyramid, boxes, obj_levels, grid=grid, ratio=ratio)
    bg = pool_rois(pyramid, ext, bg_levels, grid=grid, ratio=ratio)
    return DualContextFeatures(obj, bg, obj_levels, bg_levels)
