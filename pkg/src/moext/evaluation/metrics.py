"""Macro-averaged recall (UAR), macro F1 (UF1) and accuracy from a confusion matrix.

Classes with no true samples are dropped from the macro averages and
reported through a warning and ``c_effective``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


class AbsentClassWarning(UserWarning):
    pass


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted class
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        c = self.counts
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {c.shape}")
        if (c < 0).any():
            raise ValueError("confusion counts must be non-negative")
        if not self.class_names:
            self.class_names = [str(i) for i in range(c.shape[0])]
        if len(self.class_names) != c.shape[0]:
            raise ValueError("class_names length does not match matrix size")

    @classmethod
    def from_pairs(cls, y_true, y_pred, class_names) -> "ConfusionMatrix":
        n = len(class_names)
        counts = np.zeros((n, n), dtype=np.int64)
        np.add.at(counts, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
        return cls(counts, list(class_names))

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.class_names != other.class_names:
            raise ValueError("cannot add confusion matrices over different classes")
        return ConfusionMatrix(self.counts + other.counts, list(self.class_names))

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def tp(self):
        return np.diag(self.counts)

    @property
    def fn(self):
        return self.counts.sum(1) - self.tp

    @property
    def fp(self):
        return self.counts.sum(0) - self.tp

    @property
    def present(self) -> np.ndarray:
        return self.counts.sum(1) > 0

    @property
    def c_effective(self) -> int:
        return int(self.present.sum())

    def to_dict(self):
        return {"class_names": list(self.class_names), "counts": self.counts.tolist()}


def _present_or_raise(cm: ConfusionMatrix, metric: str) -> np.ndarray:
    if cm.n == 0:
        raise ValueError(f"{metric}: empty confusion matrix")
    present = cm.present
    if not present.all():
        absent = [cm.class_names[i] for i in np.flatnonzero(~present)]
        warnings.warn(f"{metric}: classes without true samples dropped from the average: {absent} "
                      f"(C_effective={int(present.sum())})", AbsentClassWarning, stacklevel=3)
    return present


def uar(cm: ConfusionMatrix) -> float:
    present = _present_or_raise(cm, "UAR")
    tp, fn = cm.tp[present], cm.fn[present]
    return float(np.mean(tp / (tp + fn)))


def uf1(cm: ConfusionMatrix) -> float:
    present = _present_or_raise(cm, "UF1")
    tp, fp, fn = cm.tp[present], cm.fp[present], cm.fn[present]
    return float(np.mean(2 * tp / (2 * tp + fp + fn)))


def acc(cm: ConfusionMatrix) -> float:
    if cm.n == 0:
        raise ValueError("ACC: empty confusion matrix")
    return float(np.trace(cm.counts) / cm.n)


def summarize(cm: ConfusionMatrix) -> dict:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", AbsentClassWarning)
        out = {"uf1": uf1(cm), "uar": uar(cm), "acc": acc(cm), "n_samples": cm.n, "c_effective": cm.c_effective}
    out["warnings"] = sorted({str(w.message) for w in caught})
    return out
