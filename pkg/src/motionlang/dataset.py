"""Reading the KIT Motion-Language release layout and splitting it."""
import json
import logging
import math
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_RATIOS = (0.8, 0.1, 0.1)


class DatasetError(ValueError):
    pass


@dataclass
class MotionRecord:
    id: str
    joint_names: list
    frame_rate_hz: float
    frames: np.ndarray
    annotations: list = field(default_factory=list)
    labels: list = field(default_factory=list)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise DatasetError(f"{self.id}: frames must be a non-empty matrix")
        if self.frames.shape[1] != len(self.joint_names):
            raise DatasetError(f"{self.id}: {self.frames.shape[1]} columns for {len(self.joint_names)} joints")
        if not np.all(np.isfinite(self.frames)):
            raise DatasetError(f"{self.id}: non-finite joint values")
        if not self.frame_rate_hz > 0:
            raise DatasetError(f"{self.id}: frame rate must be positive")

    @property
    def duration(self):
        return self.frames.shape[0] / self.frame_rate_hz

    def to_json(self):
        return {
            "id": self.id,
            "frame_rate_hz": self.frame_rate_hz,
            "joint_names": list(self.joint_names),
            "frames": self.frames.tolist(),
            "annotations": list(self.annotations),
            "labels": list(self.labels),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            id=obj["id"], joint_names=list(obj["joint_names"]), frame_rate_hz=float(obj["frame_rate_hz"]),
            frames=np.array(obj["frames"], dtype=np.float64).reshape(-1, len(obj["joint_names"])),
            annotations=list(obj.get("annotations", [])), labels=list(obj.get("labels", [])),
        )


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    seed: int
    ratios: tuple = DEFAULT_RATIOS

    def partition(self, name):
        return {"train": self.train, "validation": self.validation, "test": self.test}[name]

    def to_json(self):
        return {"seed": self.seed, "ratios": list(self.ratios), "train": self.train,
                "validation": self.validation, "test": self.test}

    @classmethod
    def from_json(cls, obj):
        return cls(list(obj["train"]), list(obj["validation"]), list(obj["test"]),
                   int(obj["seed"]), tuple(obj.get("ratios", DEFAULT_RATIOS)))


# ------------------------------------------------------------ MMM XML

def _local(tag):
    return tag.rsplit("}", 1)[-1]


def parse_motion_xml(data):
    """Parse an MMM motion file into ``(joint_names, frame_rate_hz, frames)``.

    Only ``JointOrder`` and per-frame ``Timestep``/``JointPosition`` entries are
    read; anything else in the document is ignored.  The frame rate is the
    median of the reciprocal timestep deltas (100 Hz for single-frame files).
    """
    root = ET.fromstring(data)
    motion = None
    for el in root.iter():
        if _local(el.tag) == "Motion" and any(_local(c.tag) == "JointOrder" for c in el):
            motion = el
            break
    if motion is None:
        motion = root
    joint_names = []
    frames, times = [], []
    for el in motion.iter():
        tag = _local(el.tag)
        if tag == "JointOrder":
            joint_names = [j.get("name") for j in el if _local(j.tag) == "Joint"]
        elif tag == "MotionFrame":
            ts, pos = None, None
            for c in el:
                ct = _local(c.tag)
                if ct == "Timestep":
                    ts = float(c.text)
                elif ct == "JointPosition":
                    pos = [float(v) for v in (c.text or "").split()]
            if ts is None or pos is None:
                raise DatasetError("MotionFrame without Timestep or JointPosition")
            times.append(ts)
            frames.append(pos)
    if not frames:
        raise DatasetError("motion file contains no frames")
    width = len(frames[0])
    for i, row in enumerate(frames):
        if len(row) != width:
            raise DatasetError(f"frame {i} has {len(row)} joint values, expected {width}")
    if joint_names and len(joint_names) != width:
        raise DatasetError(f"JointOrder lists {len(joint_names)} joints but frames carry {width}")
    if not joint_names:
        joint_names = [f"joint_{i}" for i in range(width)]
    deltas = np.diff(np.asarray(times))
    if np.any(deltas <= 0):
        raise DatasetError("timesteps are not strictly increasing")
    rate = float(np.median(1.0 / deltas)) if deltas.size else 100.0
    return joint_names, rate, np.asarray(frames, dtype=np.float64)


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"malformed JSON in {path}: {exc}") from exc


def _labels_from_meta(meta):
    ma = meta.get("motion_annotation")
    if isinstance(ma, dict) and isinstance(ma.get("labels"), list):
        return [str(x) for x in ma["labels"]]
    if isinstance(meta.get("motion_annotation.labels"), list):
        return [str(x) for x in meta["motion_annotation.labels"]]
    return []


def load_record(root_path, rid):
    xml_path = os.path.join(root_path, f"{rid}_mmm.xml")
    with open(xml_path, "rb") as fh:
        raw = fh.read()
    try:
        joint_names, rate, frames = parse_motion_xml(raw)
    except (ET.ParseError, DatasetError, ValueError) as exc:
        raise DatasetError(f"{xml_path}: {exc}") from exc
    ann_path = os.path.join(root_path, f"{rid}_annotations.json")
    annotations = _load_json(ann_path) if os.path.exists(ann_path) else []
    if not isinstance(annotations, list):
        raise DatasetError(f"{ann_path}: expected a JSON array of strings")
    meta_path = os.path.join(root_path, f"{rid}_meta.json")
    labels = _labels_from_meta(_load_json(meta_path)) if os.path.exists(meta_path) else []
    return MotionRecord(rid, joint_names, rate, frames, [str(a) for a in annotations], labels)


def scan_dataset(root_path):
    """Read every ``<id>_mmm.xml`` / ``_annotations.json`` / ``_meta.json`` triple.

    Records come back sorted by id.  Ids without a motion file are skipped
    with a warning.
    """
    if not os.path.isdir(root_path):
        raise DatasetError(f"dataset directory not found: {root_path}")
    ids = set()
    suffixes = ("_mmm.xml", "_annotations.json", "_meta.json")
    for name in os.listdir(root_path):
        for suf in suffixes:
            if name.endswith(suf):
                ids.add(name[: -len(suf)])
    records = []
    for rid in sorted(ids):
        if not os.path.exists(os.path.join(root_path, f"{rid}_mmm.xml")):
            log.warning("skipping %s: no motion file", rid)
            continue
        records.append(load_record(root_path, rid))
    return records


def write_records(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json()) + "\n")


def read_records(path):
    with open(path, encoding="utf-8") as fh:
        return [MotionRecord.from_json(json.loads(line)) for line in fh if line.strip()]


# -------------------------------------------------------------- splits

def split_dataset(ids, ratios=DEFAULT_RATIOS, seed=0):
    """Seeded shuffle of unique motion ids, then contiguous slicing.

    Validation and test sizes are ``floor(n * ratio)``; the remainder goes to
    train.  Splitting is by motion so annotations never straddle partitions.
    """
    ids = sorted(set(ids))
    if not ids:
        raise DatasetError("cannot split an empty id list")
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    n = len(ids)
    n_val = math.floor(n * ratios[1])
    n_test = math.floor(n * ratios[2])
    n_train = n - n_val - n_test
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    return DatasetSplit(
        train=sorted(shuffled[:n_train]),
        validation=sorted(shuffled[n_train:n_train + n_val]),
        test=sorted(shuffled[n_train + n_val:]),
        seed=int(seed),
        ratios=ratios,
    )


def write_split(path, split):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(split.to_json(), fh, indent=1)
        fh.write("\n")


def read_split(path):
    with open(path, encoding="utf-8") as fh:
        return DatasetSplit.from_json(json.load(fh))
