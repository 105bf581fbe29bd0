"""Sentence normalization, vocabulary and fixed-length index encoding."""
import json
import re
from dataclasses import dataclass

import numpy as np

PAD, SOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<sos>", "<eos>", "<unk>")
MAX_SENTENCE_LEN = 41

_PUNCT = re.compile(r"[^\w\s]|_")


def load_spelling_table(path):
    """Two-column TSV (``wrong<TAB>right``); blank lines and ``#`` comments skipped."""
    table = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected two tab-separated columns")
            table[parts[0].strip().lower()] = parts[1].strip().lower()
    check_spelling_table(table)
    return table


def check_spelling_table(table):
    # a replacement that produces another key would make normalization non-idempotent
    for wrong, right in table.items():
        for tok in right.split():
            if tok in table:
                raise ValueError(f"spelling replacement {wrong!r} -> {right!r} yields another key {tok!r}")


def normalize_sentence(text, spelling=None):
    """Lower-case, drop punctuation, fix spelling, collapse whitespace."""
    text = _PUNCT.sub("", text.lower())
    tokens = text.split()
    if spelling:
        tokens = " ".join(spelling.get(t, t) for t in tokens).split()
    return " ".join(tokens)


def tokenize(text):
    return [t for t in text.split(" ") if t]


class Vocabulary:
    def __init__(self, words):
        words = list(words)
        if tuple(words[:4]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        self.index_to_word = words
        self.word_to_index = {w: i for i, w in enumerate(words)}
        if len(self.word_to_index) != len(words):
            raise ValueError("duplicate words in vocabulary")

    def __len__(self):
        return len(self.index_to_word)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.index_to_word == other.index_to_word

    def index(self, word):
        return self.word_to_index.get(word, UNK)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.index_to_word, fh, indent=0)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))


def build_vocab(corpus):
    """Reserved tokens, then every distinct word in order of first appearance."""
    words = list(RESERVED)
    seen = set(words)
    for tokens in corpus:
        for tok in tokens:
            if tok not in seen:
                seen.add(tok)
                words.append(tok)
    return Vocabulary(words)


@dataclass
class SentenceRecord:
    tokens: list
    indices: np.ndarray
    active_length: int


def encode_sentence(vocab, tokens, max_len=MAX_SENTENCE_LEN):
    if len(tokens) > max_len - 2:
        raise ValueError(f"sentence of {len(tokens)} words exceeds the {max_len - 2} word limit")
    indices = np.full(max_len, PAD, dtype=np.int64)
    indices[0] = SOS
    indices[1:len(tokens) + 1] = [vocab.index(t) for t in tokens]
    indices[len(tokens) + 1] = EOS
    return SentenceRecord(list(tokens), indices, len(tokens) + 2)


def decode_indices(vocab, indices):
    words = []
    for i in indices:
        i = int(i)
        if not 0 <= i < len(vocab):
            raise IndexError(f"word index {i} outside vocabulary of size {len(vocab)}")
        if i >= len(RESERVED):
            words.append(vocab.index_to_word[i])
    return words


def sentence_mask(indices):
    """Active-prefix mask for padded index rows (``[B, M]``), PAD excluded."""
    indices = np.asarray(indices)
    lengths = np.array([_active_length(row) for row in np.atleast_2d(indices)])
    return (np.arange(indices.shape[-1])[None, :] < lengths[:, None]).astype(np.float64)


def _active_length(row):
    eos = np.nonzero(row == EOS)[0]
    if eos.size == 0:
        raise ValueError("sentence without EOS")
    return int(eos[0]) + 1


# ------------------------------------------------------- prepared files

def write_prepared_text(path, items):
    """``items``: dicts with ``id``, ``text``, ``tokens`` and ``indices``."""
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps({"id": item["id"], "text": item["text"], "tokens": item["tokens"],
                                 "indices": [int(i) for i in item["indices"]]}) + "\n")


def read_prepared_text(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
