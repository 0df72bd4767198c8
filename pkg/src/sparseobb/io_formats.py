"""File formats: annotations text, detections JSON, and the binary archive.

One container serves both model weights and feature pyramids: a magic
string, a length-prefixed JSON manifest (tensor table + config block), and
a contiguous little-endian float32 payload. Parsers in this module reject
malformed input with specific error types instead of guessing.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np

from . import nn
from .detection import ModelConfig, ModelParams, build_model
from .geometry import normalize_array
from .pooling import FeatureMap, FeaturePyramid

MAGIC = b"RSRC1"


class ArchiveError(ValueError):
    """Base class for container-format failures."""


class BadMagicError(ArchiveError):
    """File does not start with the archive magic."""


class TruncatedArchiveError(ArchiveError):
    """File ends before the manifest or payload is complete."""


class PayloadMismatchError(ArchiveError):
    """Manifest tensor table disagrees with the payload bytes."""


# ---------------------------------------------------------------------------
# generic container


def write_archive(path, kind: str, config: dict, tensors: list) -> None:
    """tensors: [(name, ndarray)] written as float32 in the given order."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors:
        arr = np.asarray(arr)
        data = np.ascontiguousarray(arr, dtype="<f4")
        # record arr's shape, not data's: ascontiguousarray promotes 0-d to 1-d
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": "float32", "offset": offset})
        blobs.append(data.tobytes())
        offset += len(blobs[-1])
    manifest = json.dumps({"kind": kind, "config": config,
                           "tensors": entries}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(manifest)))
        f.write(manifest)
        for b in blobs:
            f.write(b)


def read_archive(path):
    """Returns (kind, config dict, {name: float32 array})."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC):
        raise TruncatedArchiveError(f"{path}: file shorter than the magic")
    if data[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: unrecognized archive (bad magic)")
    head = len(MAGIC) + 4
    if len(data) < head:
        raise TruncatedArchiveError(f"{path}: missing manifest length")
    (mlen,) = struct.unpack("<I", data[len(MAGIC):head])
    if len(data) < head + mlen:
        raise TruncatedArchiveError(f"{path}: manifest truncated")
    try:
        manifest = json.loads(data[head:head + mlen])
    except json.JSONDecodeError as e:
        raise PayloadMismatchError(f"{path}: manifest is not valid JSON: {e}")
    payload = data[head + mlen:]
    total = 0
    for ent in manifest["tensors"]:
        nbytes = 4 * int(np.prod(ent["shape"], dtype=np.int64)) if ent["shape"] else 4
        if ent["offset"] != total:
            raise PayloadMismatchError(
                f"{path}: tensor {ent['name']} offset {ent['offset']} != {total}")
        total += nbytes
    if len(payload) < total:
        raise TruncatedArchiveError(
            f"{path}: payload has {len(payload)} bytes, manifest needs {total}")
    if len(payload) > total:
        raise PayloadMismatchError(
            f"{path}: payload has {len(payload)} bytes, manifest describes {total}")
    out = {}
    for ent in manifest["tensors"]:
        nbytes = 4 * int(np.prod(ent["shape"], dtype=np.int64)) if ent["shape"] else 4
        raw = payload[ent["offset"]:ent["offset"] + nbytes]
        out[ent["name"]] = np.frombuffer(raw, dtype="<f4").reshape(ent["shape"]).copy()
    return manifest["kind"], manifest["config"], out


# ---------------------------------------------------------------------------
# model weights


def config_hash(cfg: ModelConfig) -> str:
    blob = json.dumps(dataclasses.asdict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def save_model(model: ModelParams, path, seed: int = 0) -> None:
    config = {"model": dataclasses.asdict(model.config), "seed": seed}
    tensors = [(name, t.data) for name, t in nn.named_tensors(model)]
    write_archive(path, "model", config, tensors)


def load_model(path) -> ModelParams:
    kind, config, tensors = read_archive(path)
    if kind != "model":
        raise PayloadMismatchError(f"{path}: expected a model archive, got {kind!r}")
    cfg = ModelConfig(**config["model"])
    model = build_model(cfg, dtype=np.float32, seed=int(config.get("seed", 0)))
    wanted = dict(nn.named_tensors(model))
    if set(wanted) != set(tensors):
        missing = sorted(set(wanted) ^ set(tensors))
        raise PayloadMismatchError(f"{path}: tensor set mismatch: {missing[:5]}")
    for name, t in wanted.items():
        if tuple(t.data.shape) != tuple(tensors[name].shape):
            raise PayloadMismatchError(
                f"{path}: {name} shape {tensors[name].shape} != {t.data.shape}")
        t.data = tensors[name].astype(np.float32)
    return model


# ---------------------------------------------------------------------------
# pyramids


def save_pyramid(pyr: FeaturePyramid, path, scene_id: str,
                 split: str | None = None) -> None:
    config = {"image_size": list(pyr.image_size),
              "strides": [fm.stride for fm in pyr.levels],
              "scene_id": scene_id, "split": split}
    tensors = [(f"P{i + 2}", fm.data.data) for i, fm in enumerate(pyr.levels)]
    write_archive(path, "pyramid", config, tensors)


def load_pyramid(path):
    """Returns (FeaturePyramid, meta) where meta has scene_id and split."""
    kind, config, tensors = read_archive(path)
    if kind != "pyramid":
        raise PayloadMismatchError(f"{path}: expected a pyramid archive, got {kind!r}")
    levels = []
    for i, stride in enumerate(config["strides"]):
        levels.append(FeatureMap(tensors[f"P{i + 2}"], int(stride)))
    pyr = FeaturePyramid(levels, tuple(config["image_size"]))
    return pyr, {"scene_id": config["scene_id"], "split": config.get("split")}


# ---------------------------------------------------------------------------
# annotations (text, one box per line)


@dataclasses.dataclass
class AnnotationRecord:
    scene_id: str
    image_size: tuple
    boxes: np.ndarray      # (M, 5) radians, canonical
    labels: list
    split: str | None = None


def parse_annotations(text: str) -> list:
    """Parse `scene_id img_w img_h cx cy w h theta_deg label [split]` lines.

    `#` starts a comment. Angles arrive in degrees and are stored canonical
    in radians. Any malformed field raises with its line number.
    """
    scenes: dict = {}
    order: list = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (9, 10):
            raise ValueError(f"line {lineno}: expected 9 or 10 fields, got {len(parts)}")
        sid = parts[0]
        try:
            img_w, img_h = int(parts[1]), int(parts[2])
            cx, cy, w, h, theta_deg = (float(v) for v in parts[3:8])
        except ValueError:
            raise ValueError(f"line {lineno}: non-numeric field")
        if img_w <= 0 or img_h <= 0:
            raise ValueError(f"line {lineno}: non-positive image size")
        if w <= 0:
            raise ValueError(f"non-positive width at line {lineno}")
        if h <= 0:
            raise ValueError(f"non-positive height at line {lineno}")
        label = parts[8]
        split = parts[9] if len(parts) == 10 else None
        if split is not None and split not in ("inshore", "offshore"):
            raise ValueError(f"line {lineno}: unknown split tag {split!r}")
        if sid not in scenes:
            scenes[sid] = {"size": (img_w, img_h), "boxes": [], "labels": [],
                           "split": split}
            order.append(sid)
        rec = scenes[sid]
        if rec["size"] != (img_w, img_h):
            raise ValueError(f"line {lineno}: image size differs from earlier "
                             f"lines of scene {sid}")
        if rec["split"] != split:
            raise ValueError(f"line {lineno}: split tag differs within scene {sid}")
        rec["boxes"].append((cx, cy, w, h, math.radians(theta_deg)))
        rec["labels"].append(label)
    out = []
    for sid in order:
        rec = scenes[sid]
        boxes = normalize_array(np.array(rec["boxes"], dtype=np.float64).reshape(-1, 5))
        out.append(AnnotationRecord(sid, rec["size"], boxes, rec["labels"],
                                    rec["split"]))
    return out


def write_annotations(records: list) -> str:
    lines = ["# scene_id img_w img_h cx cy w h theta_deg label [split]"]
    for rec in records:
        w, h = rec.image_size
        for i, box in enumerate(rec.boxes):
            fields = [rec.scene_id, str(int(w)), str(int(h))]
            fields += [format(float(v), ".17g") for v in box[:4]]
            fields.append(format(math.degrees(float(box[4])), ".17g"))
            fields.append(rec.labels[i] if i < len(rec.labels) else "ship")
            if rec.split:
                fields.append(rec.split)
            lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# detections (JSON)


def _sig6(x: float) -> float:
    return float(f"{float(x):.6g}")


def write_detections(per_scene: list, cfg_hash: str) -> str:
    """per_scene: [(scene_id, boxes (N, 5) radians, scores (N,))] -> JSON text."""
    doc = []
    for scene_id, boxes, scores in per_scene:
        entries = []
        for box, score in zip(np.asarray(boxes), np.asarray(scores)):
            entries.append({"cx": _sig6(box[0]), "cy": _sig6(box[1]),
                            "w": _sig6(box[2]), "h": _sig6(box[3]),
                            "theta_deg": _sig6(math.degrees(box[4])),
                            "score": _sig6(score)})
        doc.append({"scene_id": scene_id, "model_config_hash": cfg_hash,
                    "detections": entries})
    return json.dumps(doc, indent=1)


def parse_detections(text: str) -> list:
    """JSON text -> [(scene_id, cfg_hash, boxes (N, 5) radians, scores)]."""
    doc = json.loads(text)
    if not isinstance(doc, list):
        raise ValueError("detections document must be a JSON array of scenes")
    out = []
    for i, scene in enumerate(doc):
        for key in ("scene_id", "model_config_hash", "detections"):
            if key not in scene:
                raise ValueError(f"scene entry {i}: missing key {key!r}")
        boxes, scores = [], []
        for j, d in enumerate(scene["detections"]):
            try:
                boxes.append((float(d["cx"]), float(d["cy"]), float(d["w"]),
                              float(d["h"]), math.radians(float(d["theta_deg"]))))
                scores.append(float(d["score"]))
            except (KeyError, TypeError, ValueError) as e:
                raise ValueError(f"scene {scene['scene_id']}, detection {j}: {e}")
            if not 0.0 <= scores[-1] <= 1.0:
                raise ValueError(f"scene {scene['scene_id']}, detection {j}: "
                                 f"score {scores[-1]} outside [0, 1]")
        out.append((scene["scene_id"], scene["model_config_hash"],
                    normalize_array(np.array(boxes, dtype=np.float64).reshape(-1, 5)),
                    np.array(scores, dtype=np.float64)))
    return out
