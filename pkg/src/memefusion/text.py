"""Text preprocessing, vocabulary, sequence encoding, and the TF-IDF baseline."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import data as dat
from .errors import DataError

PAD_ID = 0
OOV_ID = 1

# unicode-aware alphanumerics; everything else (incl. underscore) separates tokens
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def preprocess_text(raw: str) -> list[str]:
    """Lowercase and split on every non-alphanumeric character."""
    return _TOKEN_RE.findall(raw.lower())


class Vocab:
    """Token-to-id map with id 0 reserved for padding and 1 for out-of-vocabulary."""

    def __init__(self, tokens: Sequence[str]):
        self.token_to_id = {tok: i + 2 for i, tok in enumerate(tokens)}
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}

    def __len__(self):
        # total id space including pad and oov
        return len(self.token_to_id) + 2

    def __contains__(self, token):
        return token in self.token_to_id

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, OOV_ID)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token.get(int(i), "<oov>") for i in ids]

    def to_json(self) -> str:
        return json.dumps(self.token_to_id, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        try:
            mapping = json.loads(text)
        except json.JSONDecodeError as e:
            raise DataError(f"vocab JSON is unreadable: {e}") from None
        ordered = sorted(mapping, key=mapping.get)
        vocab = cls(ordered)
        if vocab.token_to_id != {t: int(i) for t, i in mapping.items()}:
            raise DataError("vocab JSON ids are not contiguous from 2")
        return vocab


def build_vocab(corpus: Iterable[Sequence[str]], min_count: int = 1,
                max_size: "int | None" = None) -> Vocab:
    """Vocabulary ordered by frequency (ties lexicographic), cut at min_count/max_size."""
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    freq = Counter()
    for tokens in corpus:
        freq.update(tokens)
    kept = [t for t, c in freq.items() if c >= min_count]
    kept.sort(key=lambda t: (-freq[t], t))
    if max_size is not None:
        kept = kept[:max_size]
    return Vocab(kept)


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray      # int64, length exactly max_len
    true_length: int


def encode_sequence(tokens: Sequence[str], vocab: Vocab, max_len: int) -> TokenSequence:
    """Fixed-length id vector: head-truncated, right-padded, unknowns -> OOV."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    kept = tokens[:max_len]
    for i, tok in enumerate(kept):
        ids[i] = vocab.lookup(tok)
    return TokenSequence(ids=ids, true_length=len(kept))


# ---------------------------------------------------------------------------
# TF-IDF + logistic regression baseline
# ---------------------------------------------------------------------------

class TfidfEncoder:
    """Raw-count tf, smoothed idf ln((1+N)/(1+df)) + 1, rows L2-normalized."""

    def __init__(self):
        self.vocab_index: dict[str, int] = {}
        self.idf: np.ndarray | None = None

    def fit(self, token_lists: Sequence[Sequence[str]]) -> "TfidfEncoder":
        terms = sorted({t for tokens in token_lists for t in tokens})
        if not terms:
            raise ValueError("empty vocabulary: no tokens survive preprocessing")
        self.vocab_index = {t: i for i, t in enumerate(terms)}
        df = np.zeros(len(terms))
        for tokens in token_lists:
            for t in set(tokens):
                df[self.vocab_index[t]] += 1
        n = len(token_lists)
        self.idf = np.log((1.0 + n) / (1.0 + df)) + 1.0
        return self

    def transform(self, token_lists: Sequence[Sequence[str]]) -> np.ndarray:
        if self.idf is None:
            raise ValueError("TfidfEncoder is not fitted")
        mat = np.zeros((len(token_lists), len(self.vocab_index)))
        for r, tokens in enumerate(token_lists):
            for t in tokens:
                col = self.vocab_index.get(t)
                if col is not None:
                    mat[r, col] += 1.0
        mat *= self.idf
        norms = np.linalg.norm(mat, axis=1, keepdims=True)
        np.divide(mat, norms, out=mat, where=norms > 0)
        return mat


def _fit_multinomial_logreg(x: np.ndarray, y: np.ndarray, class_weights: np.ndarray,
                            lr: float = 0.5, steps: int = 300) -> tuple[np.ndarray, np.ndarray]:
    """Full-batch gradient descent on class-weighted cross entropy; zero init."""
    n, d = x.shape
    k = len(class_weights)
    w = np.zeros((d, k))
    b = np.zeros(k)
    onehot = np.eye(k)[y]
    sample_w = class_weights[y][:, None]
    for _ in range(steps):
        logits = x @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = sample_w * (p - onehot) / n
        w -= lr * (x.T @ g)
        b -= lr * g.sum(axis=0)
    return w, b


def tfidf_logreg_baseline(train: Sequence[dat.MemeSample], eval_set: Sequence[dat.MemeSample],
                          task: str, lr: float = 0.5, steps: int = 300) -> np.ndarray:
    """Classical text baseline: TF-IDF features + class-weighted logistic regression.

    Deterministic (zero-initialized, full-batch descent). Returns predicted
    class indices for eval_set.
    """
    sub = dat.get_subtask(task)
    train_tokens = [preprocess_text(s.text) for s in train]
    eval_tokens = [preprocess_text(s.text) for s in eval_set]
    enc = TfidfEncoder().fit(train_tokens)
    x_train = enc.transform(train_tokens)
    x_eval = enc.transform(eval_tokens)
    y_train = np.array([dat.task_label(s, task) for s in train])
    weights_map = dat.compute_class_weights(dat.class_distribution(train, task))
    class_weights = np.array([weights_map[c] for c in range(sub.num_classes)])
    w, b = _fit_multinomial_logreg(x_train, y_train, class_weights, lr=lr, steps=steps)
    scores = x_eval @ w + b
    return scores.argmax(axis=1)
