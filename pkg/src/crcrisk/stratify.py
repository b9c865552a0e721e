"""Median-threshold risk calls and the two-tissue ensemble."""

import enum
import math

from .tissue import TissueClass


class BinaryRisk(enum.IntEnum):
    LowBin = 0
    HighBin = 1


class RiskClass(enum.IntEnum):
    Low = 0
    Medium = 1
    High = 2

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        try:
            return cls[str(text).strip().capitalize()]
        except KeyError:
            raise ValueError(f"unknown risk class {text!r}") from None


def binarize(score: float, train_median: float) -> BinaryRisk:
    """High when strictly above the training median; ties go Low."""
    if not (math.isfinite(score) and math.isfinite(train_median)):
        raise ValueError("score and median must be finite")
    return BinaryRisk.HighBin if score > train_median else BinaryRisk.LowBin


def ensemble(tumor: BinaryRisk, stroma: BinaryRisk) -> RiskClass:
    highs = int(tumor == BinaryRisk.HighBin) + int(stroma == BinaryRisk.HighBin)
    return RiskClass(highs)


def select_top_tissues(models, k=2):
    """The ``k`` tissues with the highest cross-validated C-index.

    ``models`` is a sequence of ``(TissueClass, c_index)``; equal C-indices
    are ordered by tissue enumeration order.
    """
    models = [(TissueClass.parse(t), float(c)) for t, c in models]
    if len(models) < k:
        raise ValueError(f"need at least {k} tissue models, got {len(models)}")
    ranked = sorted(models, key=lambda tc: (-tc[1], int(tc[0])))
    return [t for t, _ in ranked[:k]]
