"""Prepared-directory layout: building it from a dataset and reading it back."""
import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from .dataset import read_records, read_split, scan_dataset, split_dataset, write_records, write_split
from .motion import (Standardizer, apply_standardizer, filter_by_duration, fit_standardizer,
                     load_prepared_motions, prepare_motion, resample_nearest, save_prepared_motions,
                     select_joints)
from .seq2seq import Example
from .text import (MAX_SENTENCE_LEN, Vocabulary, build_vocab, encode_sentence, load_spelling_table,
                   normalize_sentence, read_prepared_text, tokenize, write_prepared_text)

log = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")


def _annotation_tokens(record, spelling):
    out = []
    for text in record.annotations:
        tokens = tokenize(normalize_sentence(text, spelling))
        if not tokens:
            log.warning("%s: annotation %r is empty after normalization; skipped", record.id, text)
            continue
        if len(tokens) > MAX_SENTENCE_LEN - 2:
            log.warning("%s: annotation with %d words exceeds the length limit; skipped", record.id, len(tokens))
            continue
        out.append((text, tokens))
    return out


def prepare_dataset(cfg, out_dir):
    """Run the full preparation for ``cfg`` and write the prepared directory.

    Returns a summary dict (also stored as ``prepared.json``).
    """
    if not cfg.dataset_root:
        raise ValueError("dataset_root is not set")
    os.makedirs(out_dir, exist_ok=True)
    records = filter_by_duration(scan_dataset(cfg.dataset_root), cfg.max_seconds)
    if not records:
        raise ValueError(f"no usable motions in {cfg.dataset_root}")
    joint_names = list(cfg.joint_names or records[0].joint_names)
    spelling = load_spelling_table(cfg.spelling_table) if cfg.spelling_table else None

    # joint selection, resampling and the length limit decide which records survive
    max_len = cfg.model_config().max_motion_length
    usable, prepared = [], {}
    for rec in records:
        try:
            prepared[rec.id] = prepare_motion(rec, joint_names, None, cfg.downsample_factor, max_len)
        except (KeyError, ValueError) as exc:
            log.warning("skipping %s: %s", rec.id, exc)
            continue
        usable.append(rec)
    if not usable:
        raise ValueError("every motion was rejected during preparation")
    write_records(os.path.join(out_dir, "records.jsonl"), usable)

    split = split_dataset([r.id for r in usable], tuple(cfg.split_ratios), cfg.seed)
    write_split(os.path.join(out_dir, "split.json"), split)
    by_id = {r.id: r for r in usable}

    tokens = {r.id: _annotation_tokens(r, spelling) for r in usable}
    scope = split.train if cfg.vocab_scope == "train" else [r.id for r in usable]
    vocab = build_vocab(t for rid in scope for _, t in tokens[rid])
    vocab.save(os.path.join(out_dir, "vocab.json"))

    train_frames = [resample_nearest(select_joints(by_id[rid], joint_names), by_id[rid].frame_rate_hz)
                    for rid in split.train]
    std = fit_standardizer(train_frames)
    std.save(os.path.join(out_dir, "standardizer.json"))

    counts = {}
    for name in SPLITS:
        ids = split.partition(name)
        items = [(rid, k, apply_standardizer(seq, std)) for rid in ids for k, seq in prepared[rid]]
        save_prepared_motions(os.path.join(out_dir, f"motions_{name}.npz"), items)
        texts = [{"id": rid, "text": text, "tokens": toks,
                  "indices": encode_sentence(vocab, toks, MAX_SENTENCE_LEN).indices}
                 for rid in ids for text, toks in tokens[rid]]
        write_prepared_text(os.path.join(out_dir, f"text_{name}.jsonl"), texts)
        counts[name] = {"motions": len(ids), "sequences": len(items), "annotations": len(texts)}

    summary = {
        "joint_names": joint_names,
        "downsample_factor": cfg.downsample_factor,
        "vocab_size": len(vocab),
        "num_motions": len(usable),
        "num_annotations": sum(len(t) for t in tokens.values()),
        "splits": counts,
        "config": cfg.to_dict(),
    }
    with open(os.path.join(out_dir, "prepared.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return summary


@dataclass
class PreparedData:
    root: str
    vocab: Vocabulary
    standardizer: Standardizer
    joint_names: list
    split: object
    info: dict

    def motions(self, name):
        """``[(motion_id, offset, standardized [t, J])]`` of one split."""
        return load_prepared_motions(os.path.join(self.root, f"motions_{name}.npz"))

    def texts(self, name):
        return read_prepared_text(os.path.join(self.root, f"text_{name}.jsonl"))

    def records(self):
        return read_records(os.path.join(self.root, "records.jsonl"))

    def examples(self, name):
        """Every (downsampled motion, annotation) pair of a split."""
        by_id = {}
        for t in self.texts(name):
            by_id.setdefault(t["id"], []).append(t)
        out = []
        for rid, offset, frames in self.motions(name):
            for t in by_id.get(rid, []):
                out.append(Example(frames, np.asarray(t["indices"], dtype=np.int64), rid, offset))
        return out

    def references(self, name):
        """Motion id -> list of normalized token lists."""
        refs = {rid: [] for rid in self.split.partition(name)}
        for t in self.texts(name):
            refs[t["id"]].append(t["tokens"])
        return refs


def load_prepared(root):
    if not os.path.isdir(root):
        raise FileNotFoundError(f"prepared directory not found: {root}")
    with open(os.path.join(root, "prepared.json"), encoding="utf-8") as fh:
        info = json.load(fh)
    return PreparedData(root, Vocabulary.load(os.path.join(root, "vocab.json")),
                        Standardizer.load(os.path.join(root, "standardizer.json")),
                        info["joint_names"], read_split(os.path.join(root, "split.json")), info)
