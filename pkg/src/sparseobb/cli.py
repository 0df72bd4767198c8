"""Command-line surface: synth / train / detect / eval / oracle / bench.

Every run prints its resolved configuration (seed included) before doing
anything, so any output file can be reproduced from the log alone.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import io_formats, metrics, oracles, pooling, synth, training
from .detection import ModelConfig, build_model, infer, pipeline_forward


def _print_config(cmd: str, params: dict) -> None:
    print(f"[{cmd}] resolved config:")
    for k, v in params.items():
        print(f"  {k} = {v}")


def _parse_ratio(text: str) -> float:
    """Accept plain floats and p/q fractions (e.g. 13/7)."""
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def _parse_range(text: str) -> tuple:
    """MIN..MAX inclusive integer range."""
    lo, hi = text.split("..", 1)
    lo, hi = int(lo), int(hi)
    if hi < lo:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return lo, hi


# ---------------------------------------------------------------------------
# synth


def _cmd_synth(args) -> int:
    out_dir = Path(args.out)
    cfg = synth.SyntheticSceneConfig(
        image_size=tuple(args.size), ship_count=tuple(args.ships),
        clutter=args.clutter, seed=args.seed)
    _print_config("synth", {
        "out": out_dir, "scenes": args.scenes, "seed": args.seed,
        "clutter": args.clutter, "ships": f"{args.ships[0]}..{args.ships[1]}",
        "size": f"{args.size[0]}x{args.size[1]}",
        "channels": cfg.channels, "feature_seed": cfg.feature_seed})
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(args.scenes):
        scene_id = f"scene_{i:05d}"
        split = "inshore" if i % 2 == 0 else "offshore"
        pyr, scene = synth.generate_synthetic_scene(
            synth.SyntheticSceneConfig(
                image_size=cfg.image_size, ship_count=cfg.ship_count,
                clutter=cfg.clutter, channels=cfg.channels,
                seed=args.seed + i, feature_seed=cfg.feature_seed))
        io_formats.save_pyramid(pyr, out_dir / f"{scene_id}.rsrc",
                                scene_id, split)
        records.append(io_formats.AnnotationRecord(
            scene_id, cfg.image_size, scene.boxes,
            ["ship"] * len(scene.boxes), split))
    ann_path = out_dir / "annotations.txt"
    ann_path.write_text(io_formats.write_annotations(records))
    boxes = sum(len(r.boxes) for r in records)
    print(f"wrote {args.scenes} scenes ({boxes} boxes) to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# dataset loading shared by train / detect / eval


def _load_dataset(data_dir: Path):
    """(scene_id, pyramid, GroundTruthScene, split) per annotated scene."""
    ann_path = data_dir / "annotations.txt"
    if not ann_path.exists():
        raise FileNotFoundError(f"no annotations.txt under {data_dir}")
    records = io_formats.parse_annotations(ann_path.read_text())
    out = []
    for rec in records:
        pyr_path = data_dir / f"{rec.scene_id}.rsrc"
        if not pyr_path.exists():
            raise FileNotFoundError(f"missing pyramid archive {pyr_path}")
        pyr, meta = io_formats.load_pyramid(pyr_path)
        if meta["scene_id"] != rec.scene_id:
            raise ValueError(f"{pyr_path}: archive scene id {meta['scene_id']!r} "
                             f"does not match annotations")
        gt = training.GroundTruthScene(rec.boxes.copy(), rec.image_size)
        out.append((rec.scene_id, pyr, gt, rec.split))
    return out


# ---------------------------------------------------------------------------
# train


def _cmd_train(args) -> int:
    model_cfg = ModelConfig(
        num_proposals=args.proposals, stages=args.stages, alpha=args.alpha,
        init=args.init, fusion=args.fusion, pooling=args.pooling)
    cfg = training.TrainConfig(model=model_cfg, iters=args.iters, lr=args.lr,
                               seed=args.seed)
    _print_config("train", {
        "data": args.data, "out": args.out,
        "proposals": args.proposals, "stages": args.stages,
        "alpha": args.alpha, "init": args.init, "fusion": args.fusion,
        "pooling": args.pooling, "iters": args.iters, "lr": args.lr,
        "seed": args.seed, "batch_size": cfg.batch_size,
        "weights": f"cls={cfg.weights.lambda_cls} l1={cfg.weights.lambda_l1} "
                   f"iou={cfg.weights.lambda_iou}",
        "dtype": cfg.dtype})
    scenes = _load_dataset(Path(args.data))
    dataset = [(pyr, gt) for _, pyr, gt, _ in scenes]
    t0 = time.time()
    model, log = training.train_toy(cfg, dataset)
    final = [r for r in log if "ap50" in r]
    ap50 = final[-1]["ap50"] if final else float("nan")
    print(f"trained {log[-1]['iter']} iterations in {time.time() - t0:.1f}s, "
          f"final loss {log[-1]['loss']:.4f}, AP50 {ap50:.4f}")
    io_formats.save_model(model, args.out, seed=args.seed)
    print(f"saved model to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# detect


def _cmd_detect(args) -> int:
    _print_config("detect", {"model": args.model, "data": args.data,
                             "out": args.out, "threshold": args.threshold})
    model = io_formats.load_model(args.model)
    cfg_hash = io_formats.config_hash(model.config)
    print(f"model config hash {cfg_hash[:16]}..., "
          f"N={model.config.num_proposals}, stages={model.config.stages}")
    data_dir = Path(args.data)
    per_scene = []
    for path in sorted(data_dir.glob("*.rsrc")):
        pyr, meta = io_formats.load_pyramid(path)
        dets = infer(pyr, model, score_threshold=args.threshold)
        boxes, scores = dets.boxes, dets.scores
        if args.threshold is not None:
            boxes, scores = boxes[dets.keep], scores[dets.keep]
        per_scene.append((meta["scene_id"], boxes, scores))
    if not per_scene:
        raise FileNotFoundError(f"no pyramid archives (*.rsrc) under {data_dir}")
    Path(args.out).write_text(io_formats.write_detections(per_scene, cfg_hash))
    total = sum(len(s) for _, _, s in per_scene)
    print(f"wrote {total} detections over {len(per_scene)} scenes to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _cmd_eval(args) -> int:
    _print_config("eval", {"dets": args.dets, "ann": args.ann,
                           "split": args.split})
    ann_path = Path(args.ann)
    if ann_path.is_dir():
        ann_path = ann_path / "annotations.txt"
    records = io_formats.parse_annotations(ann_path.read_text())
    det_doc = io_formats.parse_detections(Path(args.dets).read_text())
    by_scene = {sid: (boxes, scores) for sid, _, boxes, scores in det_doc}
    hashes = {h for _, h, _, _ in det_doc}
    if len(hashes) > 1:
        raise ValueError(f"detections mix model config hashes: {sorted(hashes)}")

    preds, gts, used = [], [], 0
    for rec in records:
        if args.split != "all" and rec.split != args.split:
            continue
        if rec.scene_id not in by_scene:
            raise ValueError(f"no detections for scene {rec.scene_id}")
        preds.append(by_scene[rec.scene_id])
        gts.append(rec.boxes)
        used += 1
    if used == 0:
        raise ValueError(f"no scenes with split {args.split!r}")
    summary = metrics.coco_summary(preds, gts)
    print(f"scenes evaluated: {used} (split={args.split})")
    print(f"AP   = {summary['ap']:.4f}")
    print(f"AP50 = {summary['ap50']:.4f}")
    print(f"AP75 = {summary['ap75']:.4f}")
    for thr, val in summary["per_threshold"].items():
        print(f"  AP@{thr:.2f} = {val:.4f}")
    return 0


# ---------------------------------------------------------------------------
# oracle


def _cmd_oracle(args) -> int:
    _print_config("oracle", {"suite": args.suite, "trials": args.trials,
                             "seed": args.seed})
    records = oracles.run_suites(args.suite, args.trials, args.seed)
    width = max(len(r["name"]) for r in records)
    failures = 0
    for r in records:
        status = "PASS" if r["passed"] else "FAIL"
        failures += not r["passed"]
        print(f"  {r['name']:<{width}s}  max_err={r['value']:.3e}  "
              f"tol={r['tolerance']:.1e}  [{status}]")
    print(f"{len(records) - failures}/{len(records)} oracle checks passed")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# bench


def _bench_iou() -> None:
    rng = np.random.default_rng(0)
    boxes_a = np.array([oracles._random_box(rng) for _ in range(2000)])
    boxes_b = boxes_a.copy()
    boxes_b[:, :2] += rng.uniform(-10, 10, size=(2000, 2))
    from .geometry import iou_matrix, rotated_iou
    t0 = time.time()
    for a, b in zip(boxes_a[:500], boxes_b[:500]):
        rotated_iou(a, b)
    single = 500 / (time.time() - t0)
    t0 = time.time()
    iou_matrix(boxes_a[:200], boxes_b[:200])
    matrix = 200 * 200 / (time.time() - t0)
    print(f"  rotated_iou: {single:,.0f} pairs/s (scalar), "
          f"{matrix:,.0f} pairs/s (200x200 matrix, prefiltered)")


def _bench_pool() -> None:
    rng = np.random.default_rng(0)
    pyr = oracles._toy_pyramid(rng, channels=256, dtype=np.float32)
    boxes = np.array([oracles._random_box(rng, span=200.0) + [128, 128, 0, 0, 0]
                      for _ in range(100)])
    pooling.dual_context_pool(pyr, boxes)  # warm up
    t0 = time.time()
    reps = 5
    for _ in range(reps):
        pooling.dual_context_pool(pyr, boxes)
    rate = reps * len(boxes) / (time.time() - t0)
    print(f"  dual_context_pool: {rate:,.0f} boxes/s "
          f"(C=256, 7x7 grid, ratio 2)")


def _bench_pipeline() -> None:
    rng = np.random.default_rng(0)
    cfg = ModelConfig()
    model = build_model(cfg, dtype=np.float32, seed=0)
    pyr = oracles._toy_pyramid(rng, channels=cfg.channels, dtype=np.float32)
    pipeline_forward(pyr, model, mode="eval")  # warm up
    t0 = time.time()
    reps = 3
    for _ in range(reps):
        pipeline_forward(pyr, model, mode="eval")
    dt = (time.time() - t0) / reps
    print(f"  pipeline_forward: {dt * 1e3:,.0f} ms/scene "
          f"(N={cfg.num_proposals}, C={cfg.channels}, {cfg.stages} stages, eval)")


def _cmd_bench(args) -> int:
    _print_config("bench", {"suite": args.suite})
    if args.suite in ("iou", "all"):
        _bench_iou()
    if args.suite in ("pool", "all"):
        _bench_pool()
    if args.suite in ("pipeline", "all"):
        _bench_pipeline()
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sparseobb",
        description="Sparse oriented-box detection head: synthetic data, "
                    "training, inference, evaluation, and self-checks.")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="generate a synthetic scene dataset")
    ps.add_argument("--out", required=True, help="output directory")
    ps.add_argument("--scenes", type=int, required=True, metavar="K")
    ps.add_argument("--seed", type=int, default=0, metavar="S")
    ps.add_argument("--clutter", type=float, default=0.1, metavar="LEVEL")
    ps.add_argument("--ships", type=_parse_range, default=(1, 4),
                    metavar="MIN..MAX")
    ps.add_argument("--size", type=int, nargs=2, default=(256, 256),
                    metavar=("W", "H"))
    ps.set_defaults(func=_cmd_synth)

    pt = sub.add_parser("train", help="train a model on a dataset directory")
    pt.add_argument("--data", required=True, help="dataset directory")
    pt.add_argument("--out", required=True, help="output model archive")
    pt.add_argument("--proposals", type=int, default=100)
    pt.add_argument("--stages", type=int, default=6)
    pt.add_argument("--alpha", type=_parse_ratio, default=13.0 / 7.0,
                    metavar="RATIO", help="background extension, e.g. 13/7")
    pt.add_argument("--init", choices=("center", "random", "grid"),
                    default="center")
    pt.add_argument("--fusion", choices=("xattn", "add", "mul"),
                    default="xattn")
    pt.add_argument("--pooling", choices=("dcp", "separate"), default="dcp")
    pt.add_argument("--iters", type=int, default=2000, metavar="I")
    pt.add_argument("--lr", type=float, default=7.5e-5)
    pt.add_argument("--seed", type=int, default=0, metavar="S")
    pt.set_defaults(func=_cmd_train)

    pd = sub.add_parser("detect", help="run inference over pyramid archives")
    pd.add_argument("--model", required=True)
    pd.add_argument("--data", required=True, help="directory of *.rsrc pyramids")
    pd.add_argument("--out", required=True, help="output detections JSON")
    pd.add_argument("--threshold", type=float, default=None, metavar="T",
                    help="drop detections scoring below T (default: keep all)")
    pd.set_defaults(func=_cmd_detect)

    pe = sub.add_parser("eval", help="score detections against annotations")
    pe.add_argument("--dets", required=True, help="detections JSON")
    pe.add_argument("--ann", required=True,
                    help="annotations file or dataset directory")
    pe.add_argument("--split", choices=("inshore", "offshore", "all"),
                    default="all")
    pe.set_defaults(func=_cmd_eval)

    po = sub.add_parser("oracle", help="run reference-implementation checks")
    po.add_argument("--suite", choices=("iou", "match", "grad", "pool", "all"),
                    default="all")
    po.add_argument("--trials", type=int, default=None, metavar="N")
    po.add_argument("--seed", type=int, default=0, metavar="S")
    po.set_defaults(func=_cmd_oracle)

    pb = sub.add_parser("bench", help="throughput measurements")
    pb.add_argument("--suite", choices=("iou", "pool", "pipeline", "all"),
                    default="all")
    pb.set_defaults(func=_cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
