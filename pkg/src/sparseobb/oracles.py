"""Independent reference routes used to validate the fast implementations.

Each suite returns a list of {name, value, tolerance, passed} records so the
CLI and the test-suite consume the same machinery. The references are
deliberately naive: Monte-Carlo integration for IoU, exhaustive enumeration
for assignment, per-sample python loops for pooling, and central finite
differences for gradients.
"""

from __future__ import annotations

import math
import time

import numpy as np
import scipy.sparse

from . import autodiff as ad
from . import boxops, geometry, interaction, nn, pooling, training
from .autodiff import Tensor


def monte_carlo_iou(box_a, box_b, samples: int = 1_000_000,
                    rng: np.random.Generator | None = None) -> float:
    """Estimate IoU by sampling the overlap of the two bounding rectangles.

    Only the intersection area is stochastic; both box areas are w*h, so
    the union comes from inclusion-exclusion. Restricting samples to the
    AABB overlap keeps the estimator variance small even for thin slivers.
    """
    rng = rng or np.random.default_rng(0)
    a = np.asarray(box_a.as_array() if isinstance(box_a, geometry.OrientedBox)
                   else box_a, dtype=np.float64)
    b = np.asarray(box_b.as_array() if isinstance(box_b, geometry.OrientedBox)
                   else box_b, dtype=np.float64)
    ca, cb = geometry.box_corners(a), geometry.box_corners(b)
    lo = np.maximum(ca.min(axis=0), cb.min(axis=0))
    hi = np.minimum(ca.max(axis=0), cb.max(axis=0))
    if np.any(hi <= lo):
        return 0.0
    pts = rng.uniform(lo, hi, size=(samples, 2))

    def inside(box):
        cx, cy, w, h, th = box
        d = pts - (cx, cy)
        c, s = math.cos(th), math.sin(th)
        u = c * d[:, 0] + s * d[:, 1]
        v = -s * d[:, 0] + c * d[:, 1]
        return (np.abs(u) <= w / 2) & (np.abs(v) <= h / 2)

    rect = float(np.prod(hi - lo))
    inter = rect * np.count_nonzero(inside(a) & inside(b)) / samples
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def _record(name, value, tol, extra=None):
    rec = {"name": name, "value": float(value), "tolerance": float(tol),
           "passed": bool(value <= tol)}
    if extra:
        rec.update(extra)
    return rec


def _random_box(rng, span=100.0):
    return np.array([rng.uniform(-span / 4, span / 4),
                     rng.uniform(-span / 4, span / 4),
                     rng.uniform(2.0, span / 2),
                     rng.uniform(2.0, span / 2),
                     rng.uniform(-math.pi, math.pi)])


def iou_suite(trials: int = 200, samples: int = 1_000_000, seed: int = 0) -> list:
    """Exact polygon-clip IoU against Monte Carlo, plus analytic cases."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(trials):
        a, b = _random_box(rng), _random_box(rng)
        if k % 2 == 0:  # bias half the pairs toward solid overlap
            b[0], b[1] = a[0] + rng.uniform(-5, 5), a[1] + rng.uniform(-5, 5)
        exact = geometry.rotated_iou(a, b)
        approx = monte_carlo_iou(a, b, samples, rng)
        worst = max(worst, abs(exact - approx))
    out = [_record("iou_vs_monte_carlo", worst, 3e-3, {"trials": trials})]

    # axis-aligned overlap family: shift by dx gives intersection (w-dx)*h
    analytic_worst = 0.0
    for dx, w, h in ((2.0, 4.0, 2.0), (1.0, 3.0, 3.0), (0.5, 2.0, 1.0)):
        a = (0.0, 0.0, w, h, 0.0)
        b = (dx, 0.0, w, h, 0.0)
        inter = (w - dx) * h
        expect = inter / (2 * w * h - inter)
        analytic_worst = max(analytic_worst,
                             abs(geometry.rotated_iou(a, b) - expect))
    # unit squares rotated 45 degrees about a shared center: regular octagon
    oct_err = abs(geometry.intersection_area((0, 0, 1, 1, 0.0),
                                             (0, 0, 1, 1, math.pi / 4))
                  - 2 * (math.sqrt(2) - 1))
    out.append(_record("iou_axis_aligned_analytic", analytic_worst, 1e-9))
    out.append(_record("iou_rotated_octagon", oct_err, 1e-9))
    return out


def match_suite(trials: int = 500, seed: int = 0) -> list:
    """Solver totals and pair sets against exhaustive enumeration."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    pair_mismatches = 0
    for t in range(trials):
        n = int(rng.integers(1, 8))
        m = int(rng.integers(1, n + 1))
        cost = rng.uniform(0, 10, size=(n, m))
        if t % 5 == 0:   # integer costs force ties
            cost = np.round(cost)
        fast = training.hungarian_match(cost, canonical=True)
        slow = training.brute_force_match(cost)
        worst = max(worst, abs(fast.total_cost - slow.total_cost))
        if fast.pairs != slow.pairs:
            pair_mismatches += 1
    return [_record("match_total_cost", worst, 0.0, {"trials": trials}),
            _record("match_pair_agreement", pair_mismatches, 0)]


def dense_roi_align(feat: np.ndarray, box, grid: int, ratio: int,
                    stride: int) -> np.ndarray:
    """Loop reference for the sparse sampling matrix. feat is (C, H, W)."""
    chans, height, width = feat.shape
    cx, cy, w, h, th = (float(v) for v in box)
    c, s = math.cos(th), math.sin(th)
    out = np.zeros((grid * grid, chans))
    for i in range(grid):
        for j in range(grid):
            acc = np.zeros(chans)
            for sy in range(ratio):
                for sx in range(ratio):
                    v = ((i + (sy + 0.5) / ratio) / grid - 0.5) * h
                    u = ((j + (sx + 0.5) / ratio) / grid - 0.5) * w
                    px = cx + c * u - s * v
                    py = cy + s * u + c * v
                    gx, gy = px / stride - 0.5, py / stride - 0.5
                    x0, y0 = int(math.floor(gx)), int(math.floor(gy))
                    tx, ty = gx - x0, gy - y0
                    for ddx, ddy, wt in ((0, 0, (1 - tx) * (1 - ty)),
                                         (1, 0, tx * (1 - ty)),
                                         (0, 1, (1 - tx) * ty),
                                         (1, 1, tx * ty)):
                        xx, yy = x0 + ddx, y0 + ddy
                        if 0 <= xx < width and 0 <= yy < height:
                            acc += wt * feat[:, yy, xx]
            out[i * grid + j] = acc / (ratio * ratio)
    return out


def _toy_pyramid(rng, channels=3, size=256, dtype=np.float64):
    levels = [pooling.FeatureMap(
        rng.normal(size=(channels, size // s, size // s)).astype(dtype), s)
        for s in pooling.LEVEL_STRIDES]
    return pooling.FeaturePyramid(levels, (size, size))


def pool_suite(trials: int = 50, seed: int = 0) -> list:
    """Sparse-matrix pooling against the dense loop, plus the context contract."""
    rng = np.random.default_rng(seed)
    pyr = _toy_pyramid(rng)
    worst = 0.0
    for _ in range(trials):
        box = np.array([rng.uniform(20, 236), rng.uniform(20, 236),
                        rng.uniform(8, 200), rng.uniform(8, 200),
                        rng.uniform(0, math.pi)])
        lv = int(pooling.assign_levels(box[None, :])[0])
        fm = pyr.levels[lv]
        fast = pooling.pool_rois(pyr, box[None, :], np.array([lv]),
                                 grid=7, ratio=2).data[0]
        ref = dense_roi_align(fm.data.data, box, 7, 2, fm.stride)
        worst = max(worst, float(np.max(np.abs(fast - ref))))
    out = [_record("pool_sparse_vs_dense", worst, 1e-10, {"trials": trials})]

    # both views share one level per proposal, for any box population
    boxes = np.column_stack([rng.uniform(0, 256, 10000), rng.uniform(0, 256, 10000),
                             rng.uniform(1, 300, 10000), rng.uniform(1, 300, 10000),
                             rng.uniform(-math.pi, math.pi, 10000)])
    dc = pooling.dual_context_pool(_toy_pyramid(rng, 2), boxes, ratio=1)
    share = 0 if np.array_equal(dc.obj_levels, dc.bg_levels) else 1
    out.append(_record("dcp_level_sharing", share, 0, {"boxes": 10000}))

    # constant feature fields are reproduced for interior boxes
    cpyr = pooling.FeaturePyramid(
        [pooling.FeatureMap(np.full((2, 256 // s, 256 // s), 2.25), s)
         for s in pooling.LEVEL_STRIDES], (256, 256))
    dc = pooling.dual_context_pool(cpyr, np.array([[128.0, 128.0, 40.0, 24.0, 0.6]]))
    const_err = max(float(np.max(np.abs(dc.obj.data - 2.25))),
                    float(np.max(np.abs(dc.bg.data - 2.25))))
    out.append(_record("dcp_constant_field", const_err, 1e-12))

    # center cells of the pooled context grid never reach the background view
    a = pooling.context_grid_for(13 / 7, 7)
    bg_mat = pooling.background_matrix(7, a)
    inner = pooling.center_mask(7, a).reshape(-1)
    leak = float(np.max(np.abs(bg_mat[:, inner])))
    out.append(_record("dcp_sentinel_isolation", leak, 0.0))

    # stride-aligned axis-parallel boxes read cell centers with no mixing
    stride = 4
    fm = pyr.levels[0]
    cxy = (31 + 0.5) * stride
    box = np.array([[cxy, cxy, 7.0 * stride, 7.0 * stride, 0.0]])
    dc = pooling.dual_context_pool(pyr, box, alpha=13 / 7, grid=7, ratio=1)
    expect = np.zeros((49, pyr.channels))
    for i in range(7):
        for j in range(7):
            expect[i * 7 + j] = fm.data.data[:, 31 + i - 3, 31 + j - 3]
    out.append(_record("dcp_no_interpolation",
                       float(np.max(np.abs(dc.obj.data[0] - expect))), 0.0))
    return out


# ---------------------------------------------------------------------------
# gradient suite


def _readout(t: Tensor, w: np.ndarray) -> Tensor:
    return ad.tsum(ad.mul(t, Tensor(w)))


def grad_suite(seed: int = 0, tol: float = 1e-4) -> list:
    """Finite-difference checks for every op and the composed forward/loss."""
    rng = np.random.default_rng(seed)
    out = []

    def check(name, f, inputs, tolerance=tol, floor=1e-8):
        rep = ad.grad_check(f, inputs, tol=tolerance, floor=floor)
        out.append(_record(f"grad_{name}", rep.max_rel_err, tolerance))

    x = rng.normal(size=(3, 4))
    y = rng.normal(size=(3, 4))
    w = rng.normal(size=(3, 4))
    check("add", lambda ts: _readout(ad.add(ts["x"], ts["y"]), w), {"x": x, "y": y})
    check("sub", lambda ts: _readout(ad.sub(ts["x"], ts["y"]), w), {"x": x, "y": y})
    check("mul", lambda ts: _readout(ad.mul(ts["x"], ts["y"]), w), {"x": x, "y": y})
    check("div", lambda ts: _readout(ad.div(ts["x"], ts["y"]), w),
          {"x": x, "y": np.abs(y) + 1.0})
    a2 = rng.normal(size=(3, 4))
    b2 = rng.normal(size=(4, 2))
    w_mm = rng.normal(size=(3, 2))
    check("matmul", lambda ts: _readout(ad.matmul(ts["a"], ts["b"]), w_mm),
          {"a": a2, "b": b2})
    a3 = rng.normal(size=(2, 3, 4))
    b3 = rng.normal(size=(2, 4, 3))
    w_bmm = rng.normal(size=(2, 3, 3))
    check("matmul_batched", lambda ts: _readout(ad.matmul(ts["a"], ts["b"]), w_bmm),
          {"a": a3, "b": b3})
    check("pow_const", lambda ts: _readout(ad.pow_const(ts["x"], 3.0), w), {"x": x})
    check("relu", lambda ts: _readout(ad.relu(ts["x"]), w), {"x": x + 0.05})
    check("exp", lambda ts: _readout(ad.exp(ts["x"]), w), {"x": x})
    check("log", lambda ts: _readout(ad.log(ts["x"]), w), {"x": np.abs(x) + 0.5})
    check("sigmoid", lambda ts: _readout(ad.sigmoid(ts["x"]), w), {"x": 3 * x})
    check("cos", lambda ts: _readout(ad.cos(ts["x"]), w), {"x": x})
    check("sin", lambda ts: _readout(ad.sin(ts["x"]), w), {"x": x})
    check("abs", lambda ts: _readout(ad.absolute(ts["x"]), w), {"x": x + 0.08})
    check("clip", lambda ts: _readout(ad.clip(ts["x"], -0.5, 0.5), w), {"x": x})
    mask = rng.random((3, 4)) >= 0.4
    check("dropout_fixed_mask",
          lambda ts: _readout(ad.dropout(ts["x"], 0.4, mask), w), {"x": x})
    check("sum", lambda ts: _readout(ad.tsum(ts["x"], axis=0), w[0]), {"x": x})
    check("mean", lambda ts: _readout(ad.tmean(ts["x"], axis=1, keepdims=True),
                                      w[:, :1]), {"x": x})
    check("reshape", lambda ts: _readout(ad.reshape(ts["x"], (4, 3)),
                                         w.reshape(4, 3)), {"x": x})
    check("swapaxes", lambda ts: _readout(ad.swapaxes(ts["x"], 0, 1), w.T), {"x": x})
    w3t = rng.normal(size=(4, 2, 3))
    check("transpose", lambda ts: _readout(ad.transpose(ts["a"], (2, 0, 1)), w3t),
          {"a": a3})
    check("concat", lambda ts: _readout(ad.concat([ts["x"], ts["y"]], axis=1),
                                        np.hstack([w, w])), {"x": x, "y": y})
    check("getitem", lambda ts: _readout(ts["x"][1:, ::2], w[1:, ::2]), {"x": x})
    idx = np.array([0, 2, 2, 1])
    check("take_rows", lambda ts: _readout(ad.take_rows(ts["x"], idx), w[idx]),
          {"x": x})
    check("softmax", lambda ts: _readout(ad.softmax(ts["x"], axis=-1), w),
          {"x": 2 * x})
    gma, bta = rng.normal(size=4), rng.normal(size=4)
    check("layer_norm", lambda ts: _readout(
        ad.layer_norm(ts["x"], ts["g"], ts["b"]), w),
        {"x": x, "g": gma, "b": bta})
    smat = scipy.sparse.random(5, 9, density=0.4, random_state=3, format="csr")
    w_sp = rng.normal(size=(5, 2))
    check("sparse_gather", lambda ts: _readout(ad.sparse_gather(smat, ts["x"]), w_sp),
          {"x": rng.normal(size=(9, 2))})

    # layers
    lin = nn.linear_init(rng, 4, 3)
    w_lin = rng.normal(size=(3, 3))
    check("linear", lambda ts: _readout(
        nn.linear(ts["x"], nn.LinearParams(ts["w"], ts["b"])), w_lin),
        {"x": rng.normal(size=(3, 4)), "w": lin.weight.data, "b": lin.bias.data})
    att = nn.attention_init(rng, 8, 2)
    qkv = {"q": rng.normal(size=(5, 8)), "k": rng.normal(size=(5, 8)),
           "v": rng.normal(size=(5, 8)), "wq": att.wq.data, "wk": att.wk.data,
           "wv": att.wv.data, "wo": att.wo.data}
    w_att = rng.normal(size=(5, 8))
    check("attention", lambda ts: _readout(nn.multihead_attention(
        ts["q"], ts["k"], ts["v"],
        nn.AttentionParams(ts["wq"], ts["wk"], ts["wv"], ts["wo"], 2)), w_att),
        qkv)

    # dynamic mixing at hand size: C=6, D=3, 2x2 grid
    c, d = 6, 3
    dii = interaction.dii_init(rng, c, d, 2)
    roi = rng.normal(size=(3, 4, c))
    pro = rng.normal(size=(3, c))
    w_dii = rng.normal(size=(3, c))

    def dii_f(ts):
        params = interaction.DIIParams(
            nn.LinearParams(ts["gw"], ts["gb"]),
            nn.LayerNormParams(ts["nd_g"], ts["nd_b"]),
            nn.LayerNormParams(ts["nc_g"], ts["nc_b"]),
            nn.LinearParams(ts["ow"], ts["ob"]), c, d, 2)
        return _readout(interaction.dynamic_instance_interaction(
            ts["pro"], ts["roi"], params), w_dii)

    # dead mixing paths have exactly-zero gradients; judge those absolutely
    check("dynamic_interaction", dii_f,
          {"pro": pro, "roi": roi,
           "gw": dii.gen.weight.data, "gb": dii.gen.bias.data,
           "nd_g": dii.norm_d.gamma.data, "nd_b": dii.norm_d.beta.data,
           "nc_g": dii.norm_c.gamma.data, "nc_b": dii.norm_c.beta.data,
           "ow": dii.out.weight.data, "ob": dii.out.bias.data},
          floor=1e-5)

    # full interaction head (self-attention + mixing + FFN), params by name
    head = interaction.interaction_head_init(rng, channels=6, hidden=3,
                                             grid=2, heads=2)
    head_base = {f"h.{name}": t.data.copy()
                 for name, t in nn.named_tensors(head)}
    head_base["pro"] = rng.normal(size=(3, c))
    head_base["roi"] = rng.normal(size=(3, 4, c))
    w_head = rng.normal(size=(3, c))

    def head_f(ts):
        hp = interaction.interaction_head_init(rng, channels=6, hidden=3,
                                               grid=2, heads=2)
        _rebind(hp, {name[2:]: t for name, t in ts.items()
                     if name.startswith("h.")})
        feats, _ = interaction.interaction_head_forward(ts["pro"], ts["roi"], hp)
        return _readout(feats, w_head)

    check("interaction_head", head_f, head_base, floor=1e-5)

    # fusion variants
    fus = interaction.fusion_init(rng, 8, 2, "xattn")
    fo, fb = rng.normal(size=(4, 8)), rng.normal(size=(4, 8))
    w_fus = rng.normal(size=(4, 8))

    def fusion_f(ts):
        params = interaction.FusionParams(
            "xattn", nn.AttentionParams(ts["wq"], ts["wk"], ts["wv"], ts["wo"], 2),
            nn.LayerNormParams(ts["ng"], ts["nb"]))
        return _readout(interaction.fusion_head_forward(ts["fo"], ts["fb"], params),
                        w_fus)

    check("fusion_xattn", fusion_f,
          {"fo": fo, "fb": fb, "wq": fus.attn.wq.data, "wk": fus.attn.wk.data,
           "wv": fus.attn.wv.data, "wo": fus.attn.wo.data,
           "ng": fus.norm.gamma.data, "nb": fus.norm.beta.data})
    check("fusion_add", lambda ts: _readout(interaction.fusion_head_forward(
        ts["fo"], ts["fb"], interaction.FusionParams("add")), w_fus),
        {"fo": fo, "fb": fb})
    check("fusion_mul", lambda ts: _readout(interaction.fusion_head_forward(
        ts["fo"], ts["fb"], interaction.FusionParams("mul")), w_fus),
        {"fo": fo, "fb": fb})

    # box ops
    props = np.array([[3.0, 4.0, 2.0, 1.0, 0.4], [1.0, -2.0, 1.5, 2.5, 1.2]])
    delt = rng.normal(size=(2, 5)) * 0.2
    w_box = rng.normal(size=(2, 5))
    check("decode", lambda ts: _readout(
        boxops.decode_tensor(ts["p"], ts["d"]), w_box), {"p": props, "d": delt})
    rawboxes = np.array([[0.0, 0.0, 2.0, 1.0, 2.2], [1.0, 1.0, 1.0, 3.0, -0.7]])
    check("canonicalize", lambda ts: _readout(
        boxops.canonicalize(ts["b"]), w_box), {"b": rawboxes})
    pred = np.array([[0.0, 0.0, 2.0, 1.0, 0.3], [0.4, 0.2, 1.5, 1.2, 0.9]])
    tgt = np.array([[0.5, 0.3, 1.8, 1.2, 0.8], [0.0, 0.5, 1.2, 1.5, 0.4]])
    w_iou = rng.normal(size=2)
    check("iou_pairs", lambda ts: _readout(
        boxops.iou_pairs(ts["p"], tgt), w_iou), {"p": pred})

    # pooled features (gradient flows through the sparse gather and mixing mats)
    feat = rng.normal(size=(2, 16, 16))
    w_ro, w_rb = rng.normal(size=(1, 49, 2)), rng.normal(size=(1, 49, 2))

    def dcp_f(ts):
        pyr = pooling.FeaturePyramid(
            [pooling.FeatureMap(ts["feat"], 4)] +
            [pooling.FeatureMap(np.zeros((2, 64 // st, 64 // st)), st)
             for st in (8, 16, 32)], (64, 64))
        dc = pooling.dual_context_pool(pyr, np.array([[30.0, 30.0, 18.0, 12.0, 0.4]]))
        return ad.add(_readout(dc.obj, w_ro), _readout(dc.bg, w_rb))

    check("dual_context_pool", dcp_f, {"feat": feat})

    # full stage forward + frozen-match set loss at reduced width
    out.append(_stage_and_loss_check(seed, tol))
    return out


def _small_model_cfg():
    from .detection import ModelConfig
    # grid 5 with the default alpha gives a 9x9 context grid (centered crop)
    return ModelConfig(num_proposals=3, channels=8, hidden=4, grid=5,
                       stages=1, heads=2, sampling_ratio=1, init="random")


def _stage_and_loss_check(seed: int, tol: float) -> dict:
    """grad check of set_loss(pipeline_forward(...)) with the match frozen.

    init_boxes stays out of the sweep: box geometry reaches the sampling
    matrices as a constant by design, so the finite difference would read
    the (intentionally untracked) pooling path on top of the decode path.
    The decode-path box gradients are covered by the decode / canonicalize /
    iou_pairs checks. eps is small to stay inside ReLU kink margins, and the
    floor absorbs finite-difference noise on exact-zero dead-path gradients.
    """
    from .detection import build_model, pipeline_forward
    rng = np.random.default_rng(seed + 5)
    cfg = _small_model_cfg()
    size = 64
    pyr = pooling.FeaturePyramid(
        [pooling.FeatureMap(rng.normal(size=(8, size // s, size // s)), s)
         for s in pooling.LEVEL_STRIDES], (size, size))
    scene = training.GroundTruthScene(
        np.array([[30.0, 28.0, 20.0, 8.0, 0.5], [45.0, 40.0, 16.0, 6.0, 1.1]]),
        (size, size))

    model = build_model(cfg, dtype=np.float64, seed=seed)
    base = {name: t.data.copy() for name, t in nn.named_tensors(model)
            if name != "init_boxes"}
    outs, _ = pipeline_forward(pyr, model, mode="eval")
    match = training.hungarian_match(training.matching_cost_matrix(
        outs[0][0].data.reshape(-1), outs[0][1].data, scene), canonical=True)

    def f(ts):
        m = build_model(cfg, dtype=np.float64, seed=seed)
        _rebind(m, ts)
        stage_outputs, _ = pipeline_forward(pyr, m, mode="eval")
        loss, _ = training.set_loss([stage_outputs], [scene],
                                    frozen_matches=[[match]])
        return loss

    rep = ad.grad_check(f, base, eps=3e-6, tol=tol, floor=1e-5)
    return _record("grad_stage_and_set_loss", rep.max_rel_err, tol)


def _rebind(obj, tensors: dict, prefix: str = ""):
    """Swap every tensor field in a parameter tree for the named ones."""
    import dataclasses as dc
    if dc.is_dataclass(obj) and not isinstance(obj, type):
        for fld in dc.fields(obj):
            child = getattr(obj, fld.name)
            name = f"{prefix}.{fld.name}" if prefix else fld.name
            if isinstance(child, Tensor):
                if name in tensors:
                    setattr(obj, fld.name, tensors[name])
            else:
                _rebind(child, tensors, name)
        return
    if isinstance(obj, list):
        for i, child in enumerate(obj):
            name = f"{prefix}.{i}" if prefix else str(i)
            if isinstance(child, Tensor):
                if name in tensors:
                    obj[i] = tensors[name]
            else:
                _rebind(child, tensors, name)


def run_suites(which: str = "all", trials: int | None = None,
               seed: int = 0) -> list:
    """Run the named suite(s); returns the flat record list."""
    defaults = {"iou": 200, "match": 500, "pool": 50}
    records = []
    for suite, fn in (("iou", iou_suite), ("match", match_suite),
                      ("pool", pool_suite)):
        if which in (suite, "all"):
            t0 = time.time()
            recs = fn(trials or defaults[suite], seed=seed)
            for r in recs:
                r["elapsed"] = round(time.time() - t0, 2)
            records += recs
    if which in ("grad", "all"):
        t0 = time.time()
        recs = grad_suite(seed=seed)
        for r in recs:
            r["elapsed"] = round(time.time() - t0, 2)
        records += recs
    return records
