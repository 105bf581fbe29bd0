"""Synthetic dataset fixtures shared by the test modules."""
import json
import os

import numpy as np

JOINTS = ["BPx", "BPy", "BTx"]
PHRASES = [
    "a person walks forward",
    "someone waves with the left hand",
    "a human jumps up",
    "the person turns around slowly",
    "a person kicks with the right foot",
]


def mmm_xml(joint_names, frames, rate=100.0, extra=""):
    rows = "".join(
        f"<MotionFrame><Timestep>{i / rate!r}</Timestep>"
        f"<JointPosition>{' '.join(repr(float(v)) for v in row)}</JointPosition></MotionFrame>"
        for i, row in enumerate(frames))
    joints = "".join(f'<Joint name="{n}"/>' for n in joint_names)
    return (f'<?xml version="1.0"?><MMM><Motion name="m">{extra}<Model path="mmm.xml"/>'
            f"<JointOrder>{joints}</JointOrder><MotionFrames>{rows}</MotionFrames></Motion></MMM>")


def toy_motion(kind, n_frames, joints=3):
    t = np.arange(n_frames) / 100.0
    cols = [np.sin((kind + 1) * t * (j + 1) + kind) * (0.5 + 0.1 * kind) for j in range(joints)]
    return np.stack(cols, axis=1)


def write_toy_dataset(root, n=5, seed=0, annotations_per_motion=1):
    """``n`` motions of 3 joints at 100 Hz, 30-60 frames each, with toy descriptions."""
    rng = np.random.default_rng(seed)
    os.makedirs(root, exist_ok=True)
    for i in range(n):
        rid = f"{i:05d}"
        kind = i % len(PHRASES)
        frames = toy_motion(kind, int(rng.integers(30, 61)))
        with open(os.path.join(root, f"{rid}_mmm.xml"), "w") as fh:
            fh.write(mmm_xml(JOINTS, frames))
        anns = [PHRASES[kind] + ("" if a == 0 else f" {'again ' * a}".rstrip()) for a in range(annotations_per_motion)]
        with open(os.path.join(root, f"{rid}_annotations.json"), "w") as fh:
            json.dump(anns, fh)
        with open(os.path.join(root, f"{rid}_meta.json"), "w") as fh:
            json.dump({"motion_annotation": {"labels": [f"kind{kind}"]}}, fh)
    return root


EXTRA_PHRASES = [
    "a person walks backwards",
    "someone sits down on a chair",
    "a person dances",
    "the human raises both arms",
    "a man runs in a circle",
]


def ten_pairs(joints=44, seed=0, standardize=False):
    """Ten distinct smooth motions at 10 Hz paired with ten distinct sentences.

    Returns ``(vocab, examples, token_lists)``.
    """
    from motionlang.motion import apply_standardizer, fit_standardizer
    from motionlang.seq2seq import Example
    from motionlang.text import build_vocab, encode_sentence, tokenize

    phrases = PHRASES + EXTRA_PHRASES
    rng = np.random.default_rng(seed)
    tokens = [tokenize(p) for p in phrases]
    vocab = build_vocab(tokens)
    motions = []
    for i in range(len(phrases)):
        t = np.arange(int(rng.integers(20, 40)))[:, None] / 10
        motions.append(np.sin(t * (1 + 0.3 * i) + np.arange(joints)[None] * 0.1 * (i + 1)))
    if standardize:
        std = fit_standardizer(motions)
        motions = [apply_standardizer(m, std) for m in motions]
    examples = [Example(m, encode_sentence(vocab, tok).indices) for m, tok in zip(motions, tokens)]
    return vocab, examples, tokens


def motion_rmse(generated, target):
    """Per-joint RMSE over the target's frames.

    ``generated`` carries a trailing flag column; only active frames count and
    a short generation is extended by repeating its last frame.
    """
    active = generated[generated[:, -1] >= 0.5, :-1]
    if len(active) == 0:
        active = np.zeros((1, target.shape[1]))
    n = len(target)
    if len(active) < n:
        active = np.concatenate([active, np.repeat(active[-1:], n - len(active), axis=0)])
    return float(np.sqrt(np.mean((active[:n] - target) ** 2)))
