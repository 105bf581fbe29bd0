"""Corpus BLEU, per-rank BLEU reports and the chained relative score."""
import csv
import json
import logging
import math
import os
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .text import decode_indices

log = logging.getLogger(__name__)

SMOOTHING = "add1-on-zero"


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_length(hyp_len, refs):
    # ties go to the shorter reference
    return min((abs(len(r) - hyp_len), len(r)) for r in refs)[1]


def corpus_bleu(hypotheses, references, max_n=4):
    """Corpus-level BLEU with uniform weights over n = 1..max_n.

    Clipped n-gram matches and hypothesis n-gram totals are summed over the
    corpus before the precisions are formed.  For n >= 2 a zero match count
    is smoothed to ``1 / (total + 1)``; a zero unigram match count gives 0.
    The brevity penalty uses the closest reference length per item.
    """
    if len(hypotheses) == 0:
        raise ValueError("empty corpus")
    if len(hypotheses) != len(references):
        raise ValueError("need exactly one reference list per hypothesis")
    matches = np.zeros(max_n)
    totals = np.zeros(max_n)
    hyp_len = ref_len = 0
    for hyp, refs in zip(hypotheses, references):
        if not refs:
            raise ValueError("every hypothesis needs at least one reference")
        hyp = list(hyp)
        hyp_len += len(hyp)
        ref_len += _closest_ref_length(len(hyp), refs)
        for n in range(1, max_n + 1):
            counts = _ngrams(hyp, n)
            best = Counter()
            for ref in refs:
                best |= _ngrams(list(ref), n)
            matches[n - 1] += sum(min(c, best[g]) for g, c in counts.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    if matches[0] == 0 or hyp_len == 0:
        return 0.0
    log_p = 0.0
    for n in range(max_n):
        m, t = matches[n], totals[n]
        if n > 0 and m == 0:
            m, t = m + 1.0, t + 1.0
        log_p += math.log(m / t) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return min(1.0, bp * math.exp(log_p))


@dataclass
class BleuReport:
    scores: dict           # rank (1-based) -> corpus BLEU
    split: str
    max_n: int = 4
    smoothing: str = SMOOTHING
    baseline: float = None
    relative: dict = field(default=None)

    def __post_init__(self):
        for r, s in self.scores.items():
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"rank {r}: BLEU {s} outside [0, 1]")

    def to_json(self):
        out = {"split": self.split, "max_n": self.max_n, "smoothing": self.smoothing,
               "scores": {str(r): s for r, s in sorted(self.scores.items())}}
        if self.baseline is not None:
            out["baseline"] = self.baseline
            out["relative"] = {str(r): s for r, s in sorted(self.relative.items())}
            out["relative_mean"] = float(np.mean(list(self.relative.values())))
            out["relative_std"] = float(np.std(list(self.relative.values())))
        return out


def write_reports(out_dir, reports):
    """``bleu_report.json`` (list of reports) and ``bleu_report.csv`` (rank, split, score[, relative])."""
    with open(os.path.join(out_dir, "bleu_report.json"), "w", encoding="utf-8") as fh:
        json.dump([r.to_json() for r in reports], fh, indent=2, sort_keys=True)
    chained = any(r.baseline is not None for r in reports)
    with open(os.path.join(out_dir, "bleu_report.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "split", "score"] + (["relative"] if chained else []))
        for rep in reports:
            for rank in sorted(rep.scores):
                row = [rank, rep.split, repr(rep.scores[rank])]
                if chained:
                    row.append(repr(rep.relative[rank]) if rep.relative else "")
                w.writerow(row)


@dataclass
class EvalItem:
    """One evaluation input with its reference descriptions (token lists)."""

    key: str
    data: np.ndarray   # unpadded standardized motion [t, J] or padded sentence indices [M]
    references: list


def _rank_hypotheses(per_item, width):
    # items with fewer finished hypotheses than ranks contribute an empty sentence
    return {r: [hyps[r - 1] if r - 1 < len(hyps) else [] for hyps in per_item] for r in range(1, width + 1)}


def describe(m2l, vocab, motion, width):
    """Ranked token lists from m2l beam search on one unpadded motion."""
    context = m2l.encode_motion(_padded(motion))
    return [decode_indices(vocab, h.indices) for h in m2l.beam_search(context, width=width)]


def _padded(motion):
    motion = np.asarray(motion, dtype=np.float64)
    return np.concatenate([motion, np.ones((motion.shape[0], 1))], axis=1)


def bleu_by_rank(m2l, vocab, items, split, width=5):
    """One corpus BLEU per hypothesis rank over ``items`` (motion inputs)."""
    kept = []
    for item in items:
        if not item.references:
            log.warning("motion %s has no annotations; excluded", item.key)
            continue
        kept.append(item)
    if not kept:
        raise ValueError("no annotated motions to evaluate")
    per_item = [describe(m2l, vocab, item.data, width) for item in kept]
    refs = [item.references for item in kept]
    by_rank = _rank_hypotheses(per_item, width)
    return BleuReport({r: corpus_bleu(h, refs) for r, h in by_rank.items()}, split)


def generated_motion(l2m, indices, rng, width=None, samples=None):
    """Active joint frames of the rank-1 l2m hypothesis for one sentence."""
    context = l2m.encode_text(indices)
    hyps = l2m.beam_search(context, rng, width=width, samples=samples)
    frames = hyps[0].frames
    active = frames[frames[:, -1] >= 0.5, :-1]
    if active.shape[0] == 0:
        active = np.zeros((1, frames.shape[1] - 1))
    return active


def chained_relative_performance(l2m, m2l, vocab, items, split, baseline_bleu, rng,
                                 width=5, l2m_width=None, samples=None):
    """Describe each generated motion again and compare BLEU against ``baseline_bleu``.

    ``items`` carry sentence indices in ``data`` and the annotations of the
    motion the sentence belongs to in ``references``.  The rank-1 generated
    motion feeds the m2l model; per-rank BLEU is divided by the baseline.
    """
    if not baseline_bleu > 0:
        raise ValueError("baseline BLEU must be positive")
    kept = [it for it in items if it.references]
    if not kept:
        raise ValueError("no annotated descriptions to evaluate")
    per_item = []
    for item in kept:
        motion = generated_motion(l2m, item.data, rng, l2m_width, samples)
        per_item.append(describe(m2l, vocab, motion, width))
    refs = [item.references for item in kept]
    scores = {r: corpus_bleu(h, refs) for r, h in _rank_hypotheses(per_item, width).items()}
    return BleuReport(scores, split, baseline=float(baseline_bleu),
                      relative={r: s / baseline_bleu for r, s in scores.items()})
