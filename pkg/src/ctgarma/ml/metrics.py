"""Binary classification metrics: rank AUC, confusion-matrix rates, MCC, ROC."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import rankdata


@dataclass
class EvalReport:
    auc: Optional[float]
    tpr: Optional[float]
    fpr: Optional[float]
    mcc: float
    tp: int
    fp: int
    tn: int
    fn: int
    roc: list[tuple[float, float, float]] = field(default_factory=list)  # (threshold, fpr, tpr)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["roc"] = [list(p) for p in self.roc]
        return d


def auc_score(scores, labels) -> Optional[float]:
    """Probability that a random positive outscores a random negative (ties count 1/2)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)  # midranks for ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def confusion(predicted, labels) -> tuple[int, int, int, int]:
    predicted = np.asarray(predicted).astype(bool)
    labels = np.asarray(labels).astype(bool)
    tp = int(np.sum(predicted & labels))
    fp = int(np.sum(predicted & ~labels))
    tn = int(np.sum(~predicted & ~labels))
    fn = int(np.sum(~predicted & labels))
    return tp, fp, tn, fn


def mcc_from_confusion(tp: int, fp: int, tn: int, fn: int) -> float:
    """Matthews correlation; 0 when any margin of the table is empty."""
    denom = math.sqrt(float(tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / denom


def roc_points(scores, labels) -> list[tuple[float, float, float]]:
    """(threshold, fpr, tpr) for ``score >= threshold`` at every distinct score."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = max(int(labels.sum()), 1)
    n_neg = max(len(labels) - int(labels.sum()), 1)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tps = np.cumsum(y)
    fps = np.cumsum(~y)
    # last index of each block of tied scores
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    points = [(math.inf, 0.0, 0.0)]
    for i in last:
        points.append((float(s[i]), fps[i] / n_neg, tps[i] / n_pos))
    return [(t, float(f), float(r)) for t, f, r in points]


def compute_metrics(scores, predicted, labels) -> EvalReport:
    tp, fp, tn, fn = confusion(predicted, labels)
    return EvalReport(
        auc=auc_score(scores, labels),
        tpr=tp / (tp + fn) if tp + fn else None,
        fpr=fp / (fp + tn) if fp + tn else None,
        mcc=mcc_from_confusion(tp, fp, tn, fn),
        tp=tp, fp=fp, tn=tn, fn=fn,
        roc=roc_points(scores, labels),
    )
