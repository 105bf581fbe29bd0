"""Motion preprocessing: duration filter, joint selection, offset downsampling,
standardization, and padding with the active flag."""
import json
import logging
from dataclasses import dataclass

import numpy as np

from .nn.checkpoint import read_archive, write_archive

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8
NOMINAL_RATE_HZ = 100.0


@dataclass
class MotionSequence:
    """Padded model input: columns ``0..J-1`` joints, column ``J`` the active flag."""

    frames: np.ndarray
    source_id: str = ""
    offset: int = 0

    @property
    def active_length(self):
        return int(self.frames[:, -1].sum())


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)

    @property
    def num_joints(self):
        return self.mean.shape[0]

    def to_json(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, obj):
        return cls(np.array(obj["mean"]), np.array(obj["std"]))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def filter_by_duration(records, max_seconds=30.0):
    """Keep records strictly shorter than ``max_seconds``."""
    if not max_seconds > 0:
        raise ValueError("max_seconds must be positive")
    return [r for r in records if r.frames.shape[0] / r.frame_rate_hz < max_seconds]


def select_joints(record, joint_list):
    index = {name: i for i, name in enumerate(record.joint_names)}
    missing = [name for name in joint_list if name not in index]
    if missing:
        raise KeyError(f"{record.id}: joints not found: {', '.join(missing)}")
    return record.frames[:, [index[name] for name in joint_list]]


def resample_nearest(frames, rate_hz, target_hz=NOMINAL_RATE_HZ):
    """Nearest-frame resampling; identity when the rate already matches."""
    if abs(rate_hz - target_hz) < 1e-6 * target_hz:
        return frames
    n = frames.shape[0]
    duration = n / rate_hz
    n_out = max(1, int(round(duration * target_hz)))
    src = np.rint(np.arange(n_out) * (rate_hz / target_hz)).astype(np.intp)
    return frames[np.minimum(src, n - 1)]


def downsample_with_offsets(frames, factor=10):
    """Split ``frames`` into ``factor`` sequences; sequence k holds rows k, k+factor, ..."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    frames = np.asarray(frames)
    if frames.shape[0] == 0:
        raise ValueError("frames must be non-empty")
    return [frames[k::factor] for k in range(factor)]


def fit_standardizer(train_sequences, flag_column=False):
    """Per-joint mean and population std over the active frames given.

    With ``flag_column`` the last column of each matrix is the active flag and
    only rows where it is 1 are used (the flag itself is not standardized).
    """
    rows = []
    for seq in train_sequences:
        seq = np.asarray(seq, dtype=np.float64)
        if flag_column:
            seq = seq[seq[:, -1] > 0, :-1]
        rows.append(seq)
    if not rows or sum(r.shape[0] for r in rows) == 0:
        raise ValueError("no active frames to fit a standardizer on")
    data = np.concatenate(rows, axis=0)
    mean = data.mean(axis=0)
    std = np.maximum(data.std(axis=0), STD_FLOOR)
    return Standardizer(mean, std)


def _split_flag(seq, s):
    seq = np.asarray(seq, dtype=np.float64)
    J = s.num_joints
    if seq.shape[-1] == J:
        return seq, None
    if seq.shape[-1] == J + 1:
        return seq[..., :J], seq[..., J:]
    raise ValueError(f"expected {J} or {J + 1} columns, got {seq.shape[-1]}")


def apply_standardizer(seq, s):
    joints, flag = _split_flag(seq, s)
    out = (joints - s.mean) / s.std
    return out if flag is None else np.concatenate([out, flag], axis=-1)


def invert_standardizer(seq, s):
    joints, flag = _split_flag(seq, s)
    out = joints * s.std + s.mean
    return out if flag is None else np.concatenate([out, flag], axis=-1)


def pad_and_flag(seq, target_len=300, source_id="", offset=0):
    seq = np.asarray(seq, dtype=np.float64)
    t, J = seq.shape
    if t == 0:
        raise ValueError("cannot pad an empty sequence")
    if t > target_len:
        raise ValueError(f"sequence of {t} frames exceeds target length {target_len}")
    frames = np.zeros((target_len, J + 1))
    frames[:t, :J] = seq
    frames[:t, J] = 1.0
    return MotionSequence(frames, source_id, offset)


def pad_batch(seqs, length=None):
    """Stack unpadded ``[t, J]`` matrices into ``[B, T, J+1]`` padded inputs."""
    length = length or max(s.shape[0] for s in seqs)
    return np.stack([pad_and_flag(s, length).frames for s in seqs])


def prepare_motion(record, joint_list, standardizer=None, factor=10, max_len=300):
    """Joint selection, 100 Hz resampling and offset downsampling of one record.

    Returns ``[(offset, frames)]`` with empty offsets dropped; frames are
    standardized when a standardizer is given.  Raises ``ValueError`` when a
    downsampled sequence is longer than ``max_len``.
    """
    frames = resample_nearest(select_joints(record, joint_list), record.frame_rate_hz)
    out = []
    for k, seq in enumerate(downsample_with_offsets(frames, factor)):
        if seq.shape[0] == 0:
            continue
        if seq.shape[0] > max_len:
            raise ValueError(f"{record.id}: {seq.shape[0]} frames after downsampling exceed {max_len}")
        out.append((k, apply_standardizer(seq, standardizer) if standardizer is not None else seq))
    return out


# ------------------------------------------------------- prepared files

def save_prepared_motions(path, items):
    """``items``: list of ``(source_id, offset, standardized [t, J] matrix)``.

    Sequences are stored unpadded and concatenated; ``lengths`` recovers them.
    """
    lengths = np.array([m.shape[0] for _, _, m in items], dtype=np.int64)
    J = items[0][2].shape[1] if items else 0
    frames = np.concatenate([m for _, _, m in items], axis=0) if items else np.zeros((0, J))
    manifest = {"kind": "prepared-motions", "source_ids": [sid for sid, _, _ in items]}
    write_archive(path, manifest, {
        "offsets": np.array([off for _, off, _ in items], dtype=np.int64),
        "lengths": lengths,
        "frames": frames,
    })


def load_prepared_motions(path):
    manifest, arrays = read_archive(path)
    bounds = np.concatenate([[0], np.cumsum(arrays["lengths"])])
    return [
        (sid, int(off), arrays["frames"][bounds[i]:bounds[i + 1]])
        for i, (sid, off) in enumerate(zip(manifest["source_ids"], arrays["offsets"]))
    ]
