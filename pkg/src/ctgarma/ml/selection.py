"""Correlation pruning and greedy forward selection on cross-validated MCC."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .folds import stratified_kfold
from .metrics import confusion, mcc_from_confusion
from .models import ModelConfig, TrainingError, fit_model


@dataclass
class PruneResult:
    retained: list[str]
    dropped: dict[str, tuple[str, float]] = field(default_factory=dict)
    flagged: list[str] = field(default_factory=list)


def _pair_corr(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    ok = ~np.isnan(a) & ~np.isnan(b)
    if ok.sum() < 3:
        return None
    x, y = a[ok] - a[ok].mean(), b[ok] - b[ok].mean()
    den = np.sqrt((x @ x) * (y @ y))
    if den == 0:
        return None
    return float(np.clip((x @ y) / den, -1.0, 1.0))


def pearson_prune(X, names: Sequence[str], threshold: float = 0.88) -> PruneResult:
    """Scan features in order, dropping any whose |r| with a kept one exceeds ``threshold``.

    Correlations use pairwise-complete rows. Exact duplicates of a kept feature
    are dropped whatever the threshold. Features with no variance are kept and
    listed in ``flagged``.
    """
    X = np.asarray(X, dtype=float)
    result = PruneResult([])
    kept_cols: list[int] = []
    for j, name in enumerate(names):
        col = X[:, j]
        present = col[~np.isnan(col)]
        if len(present) == 0 or np.all(present == present[0]):
            result.flagged.append(name)
        reason = None
        for k in kept_cols:
            if np.array_equal(col, X[:, k], equal_nan=True):
                reason = (names[k], 1.0)
                break
            r = _pair_corr(col, X[:, k])
            if r is not None and abs(r) > threshold:
                reason = (names[k], r)
                break
        if reason is None:
            kept_cols.append(j)
            result.retained.append(name)
        else:
            result.dropped[name] = reason
    return result


def cv_mcc(X, y, config: ModelConfig, folds: Sequence[np.ndarray]) -> float:
    """Mean validation MCC at threshold 0.5 over pre-built folds."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    scores = []
    for val in folds:
        train = np.setdiff1d(np.arange(len(y)), val)
        fitted = fit_model(config, X[train], y[train])
        pred = fitted.predict_proba(X[val]) >= 0.5
        scores.append(mcc_from_confusion(*confusion(pred, y[val])))
    return float(np.mean(scores))


@dataclass
class SelectionResult:
    selected: list[str]
    trace: list[tuple[str, float]]


def forward_select(X, y, names: Sequence[str], config: ModelConfig, seed: int = 0,
                   k: int = 5, min_gain: float = 1e-4,
                   max_features: Optional[int] = None) -> SelectionResult:
    """Greedy forward selection maximising mean k-fold MCC.

    The empty model scores 0 (a constant predictor). Ties go to the earlier
    feature in ``names``; selection stops when the best addition improves the
    score by no more than ``min_gain``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    names = list(names)
    if not names:
        return SelectionResult([], [])
    folds = stratified_kfold(y, k, seed).folds
    selected: list[int] = []
    trace: list[tuple[str, float]] = []
    best = 0.0
    limit = len(names) if max_features is None else max_features
    while len(selected) < limit:
        cand_best, cand_idx = -np.inf, None
        for j in range(len(names)):
            if j in selected:
                continue
            try:
                score = cv_mcc(X[:, selected + [j]], y, config, folds)
            except TrainingError:
                continue
            if score > cand_best:
                cand_best, cand_idx = score, j
        if cand_idx is None or cand_best <= best + min_gain:
            break
        selected.append(cand_idx)
        best = cand_best
        trace.append((names[cand_idx], cand_best))
    return SelectionResult([names[j] for j in selected], trace)
