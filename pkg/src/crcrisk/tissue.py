"""Tissue-type assignment for tiles.

Tiles get one of nine tissue labels either from an externally produced
tissue map (CSV) or from a baseline multinomial logistic regression over the
256-d tile feature vectors.
"""

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import Stream

N_FEATURES = 256


class TissueClass(enum.IntEnum):
    ADI = 0
    BACK = 1
    DEB = 2
    LYM = 3
    MUC = 4
    MUS = 5
    NORM = 6
    STR = 7
    TUM = 8

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        try:
            if isinstance(text, (int, np.integer)) and not isinstance(text, bool):
                return cls(int(text))
            return cls[str(text).strip()]
        except (KeyError, ValueError):
            raise ValueError(f"unknown tissue class {text!r}") from None


N_CLASSES = len(TissueClass)


class TissueMapError(ValueError):
    pass


@dataclass
class SoftmaxClassifier:
    weights: np.ndarray  # (9, 256)
    bias: np.ndarray  # (9,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.shape != (N_CLASSES, self.weights.shape[1]) or self.bias.shape != (N_CLASSES,):
            raise ValueError("classifier needs a (9, d) weight matrix and a 9-vector bias")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValueError("classifier parameters must be finite")


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def classify(feat, model: SoftmaxClassifier):
    """Return ``(TissueClass, probs)`` for one tile feature vector.

    Ties at the maximum resolve to the earliest class in enumeration order.
    """
    probs = softmax(model.weights @ np.asarray(feat, dtype=np.float64) + model.bias)
    return TissueClass(int(np.argmax(probs))), probs


def classify_batch(features, model: SoftmaxClassifier):
    probs = softmax(np.asarray(features, dtype=np.float64) @ model.weights.T + model.bias)
    return np.argmax(probs, axis=1), probs


def cross_entropy(W, b, X, y):
    """Mean cross-entropy and its gradients w.r.t. ``W`` and ``b``."""
    n = X.shape[0]
    logits = X @ W.T + b
    logits = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(logits).sum(axis=1))
    loss = float(np.mean(logsum - logits[np.arange(n), y]))
    p = np.exp(logits - logsum[:, None])
    p[np.arange(n), y] -= 1.0
    p /= n
    return loss, p.T @ X, p.sum(axis=0)


def train_classifier(data, lr=0.1, epochs=200, seed=0) -> SoftmaxClassifier:
    """Full-batch gradient descent on the mean cross-entropy.

    ``data`` is a sequence of ``(features, TissueClass)`` pairs. Weights start
    from N(0, 0.01^2) draws keyed by ``seed``; a step that raises the loss is
    rejected and the learning rate halved, so the final loss never exceeds the
    initial one.
    """
    data = list(data)
    X = np.array([np.asarray(f, dtype=np.float64) for f, _ in data])
    y = np.array([int(TissueClass.parse(c)) for _, c in data])
    if np.unique(y).size < 2:
        raise ValueError("degenerate labels: need at least 2 distinct classes")
    d = X.shape[1]
    W = 0.01 * Stream(seed, 0x7155).normal(N_CLASSES * d).reshape(N_CLASSES, d)
    b = np.zeros(N_CLASSES)
    loss, gW, gb = cross_entropy(W, b, X, y)
    for _ in range(int(epochs)):
        while True:
            W_new, b_new = W - lr * gW, b - lr * gb
            new_loss, new_gW, new_gb = cross_entropy(W_new, b_new, X, y)
            if new_loss <= loss or lr < 1e-12:
                break
            lr /= 2.0
        if new_loss > loss:
            break
        W, b, loss, gW, gb = W_new, b_new, new_loss, new_gW, new_gb
    return SoftmaxClassifier(W, b)


def load_tissue_map(path):
    """Read a tissue map CSV into ``{(slide_id, tile_x, tile_y): TissueClass}``.

    Columns are ``slide_id, tile_x, tile_y, class``; a header row with those
    names is optional.
    """
    out = {}
    with open(Path(path), newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and [c.strip() for c in row] == ["slide_id", "tile_x", "tile_y", "class"]:
                continue
            if len(row) != 4:
                raise TissueMapError(f"malformed row at line {lineno}: expected 4 fields, got {len(row)}")
            slide, xs, ys, label = (c.strip() for c in row)
            try:
                key = (slide, int(xs), int(ys))
            except ValueError:
                raise TissueMapError(f"malformed row at line {lineno}: non-integer tile coordinate") from None
            if label not in TissueClass.__members__:
                raise TissueMapError(f"unknown tissue class at line {lineno}: {label!r}")
            if key in out:
                raise TissueMapError(f"duplicate tile at line {lineno}: {key}")
            out[key] = TissueClass[label]
    return out


def write_tissue_map(path, mapping):
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slide_id", "tile_x", "tile_y", "class"])
        for (slide, x, y), cls in sorted(mapping.items()):
            w.writerow([slide, x, y, TissueClass(cls).name])
