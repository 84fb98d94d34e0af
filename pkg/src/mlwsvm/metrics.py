"""Confusion matrix and the imbalanced-classification measures SN, SP, G-mean, ACC.

The positive class is +1 (the minority by convention).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, UndefinedMeasureError


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)

    def swapped(self) -> "ConfusionMatrix":
        """The same evaluation with the roles of the two classes exchanged."""
        return ConfusionMatrix(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)


@dataclass(frozen=True)
class Measures:
    sn: float
    sp: float
    gmean: float
    acc: float

    def rounded(self, digits: int = 4) -> "Measures":
        return Measures(*(round(v, digits) for v in (self.sn, self.sp, self.gmean, self.acc)))


def accumulate(predicted, actual) -> ConfusionMatrix:
    p = np.asarray(predicted)
    a = np.asarray(actual)
    if p.shape != a.shape or p.ndim != 1:
        raise DataError(f"predicted {p.shape} and actual {a.shape} must be equal-length vectors")
    for name, v in (("predicted", p), ("actual", a)):
        if not np.all((v == 1) | (v == -1)):
            raise DataError(f"{name} labels must be -1 or +1")
    pos_p, pos_a = p == 1, a == 1
    return ConfusionMatrix(
        tp=int(np.sum(pos_p & pos_a)),
        fp=int(np.sum(pos_p & ~pos_a)),
        fn=int(np.sum(~pos_p & pos_a)),
        tn=int(np.sum(~pos_p & ~pos_a)),
    )


def measures(cm: ConfusionMatrix) -> Measures:
    """SN, SP, G-mean and ACC of a confusion matrix.

    Raises :class:`UndefinedMeasureError` when either class is absent, since
    a silent zero would bias G-mean based model selection.
    """
    if cm.tp + cm.fn == 0:
        raise UndefinedMeasureError("no positive points: sensitivity is undefined")
    if cm.tn + cm.fp == 0:
        raise UndefinedMeasureError("no negative points: specificity is undefined")
    sn = cm.tp / (cm.tp + cm.fn)
    sp = cm.tn / (cm.tn + cm.fp)
    return Measures(sn=sn, sp=sp, gmean=math.sqrt(sn * sp), acc=(cm.tp + cm.tn) / cm.total)


def gmean_from_rates(sn: float, sp: float) -> float:
    return math.sqrt(sn * sp)


def gmean_score(predicted, actual) -> float:
    return measures(accumulate(predicted, actual)).gmean
