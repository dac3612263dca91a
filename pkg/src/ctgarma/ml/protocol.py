"""Evaluation protocols: stratified k-fold CV and leave-one-patient-out with an
inner k-fold ensemble."""

from __future__ import annotations

import enum
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .folds import FoldPlan, stratified_kfold, substream
from .metrics import EvalReport, compute_metrics
from .models import FittedModel, ModelConfig, TrainingError, fit_model
from .selection import forward_select, pearson_prune


class ProtocolError(RuntimeError):
    pass


class Ensemble(enum.Enum):
    AVERAGE = "avg"
    VOTE = "vote"


def ensemble_predict(probabilities: Sequence[float], method: Ensemble | str = Ensemble.AVERAGE,
                     threshold: float = 0.5) -> int:
    p = np.asarray(probabilities, dtype=float)
    method = Ensemble(method)
    if method is Ensemble.AVERAGE:
        return int(p.mean() >= threshold)
    votes = int(np.sum(p >= threshold))
    return int(2 * votes > len(p))


@dataclass(frozen=True)
class SelectionConfig:
    prune_threshold: float = 0.88
    forward: bool = True
    min_gain: float = 1e-4


@dataclass
class AuditEntry:
    held_out: str
    train_ids: frozenset
    inner_train_ids: list[frozenset]
    normalizer_stats: list[tuple[np.ndarray, np.ndarray, np.ndarray]]
    features: list[str]


@dataclass
class LooResult:
    report: EvalReport
    ids: list[str]
    labels: np.ndarray
    scores: np.ndarray
    classes: np.ndarray
    member_probs: np.ndarray
    ensemble: Ensemble
    audit: list[AuditEntry] = field(default_factory=list)

    def per_patient(self) -> list[dict]:
        return [{"patient_id": pid, "label": int(y), "score": float(s), "class": int(c),
                 "member_probs": [float(p) for p in mp]}
                for pid, y, s, c, mp in zip(self.ids, self.labels, self.scores, self.classes,
                                            self.member_probs)]


def check_audit(entries: Sequence[AuditEntry]) -> None:
    """Raise if a held-out patient contributed to anything fitted for it."""
    for e in entries:
        if e.held_out in e.train_ids:
            raise ProtocolError(f"{e.held_out} was in its own outer training set")
        for inner in e.inner_train_ids:
            if e.held_out in inner or not inner <= e.train_ids:
                raise ProtocolError(f"{e.held_out} leaked into an inner training set")


def _inner_ensemble(X, y, ids, config: ModelConfig, k: int, seed: int, tag: str,
                    max_retries: int = 10) -> tuple[list[FittedModel], list[np.ndarray]]:
    for attempt in range(max_retries):
        plan = stratified_kfold(y, k, substream(seed, "inner", tag, attempt))
        trains = [plan.train_index(f) for f in range(k)]
        if all(len(np.unique(y[t])) == 2 for t in trains):
            break
    else:
        raise ProtocolError(f"{tag}: no stratification gives every inner fold both classes")
    models = [fit_model(config, X[t], y[t], seed=substream(seed, "fit", tag, f), train_index=t)
              for f, t in enumerate(trains)]
    return models, trains


def _select(X, y, names, config: ModelConfig, selection: SelectionConfig, seed: int,
            k: int) -> list[int]:
    pruned = pearson_prune(X, names, selection.prune_threshold).retained
    cols = [names.index(n) for n in pruned]
    if not selection.forward:
        return cols
    chosen = forward_select(X[:, cols], y, pruned, config, seed=seed, k=k,
                            min_gain=selection.min_gain).selected
    # an empty greedy pick falls back to the pruned set
    return [names.index(n) for n in chosen] if chosen else cols


def _loo_one(args):
    i, X, y, ids, names, config, seed, k, selection = args
    n = len(y)
    train = np.concatenate([np.arange(i), np.arange(i + 1, n)])
    Xtr, ytr = X[train], y[train]
    pid = ids[i]
    cols = list(range(X.shape[1]))
    if selection is not None:
        cols = _select(Xtr, ytr, list(names), config, selection,
                       substream(seed, "select", pid), k)
    models, trains = _inner_ensemble(Xtr[:, cols], ytr, ids, config, k, seed, pid)
    probs = np.array([m.predict_proba(X[i:i + 1, cols])[0] for m in models])
    train_ids = frozenset(ids[j] for j in train)
    entry = AuditEntry(
        held_out=pid,
        train_ids=train_ids,
        inner_train_ids=[frozenset(ids[train[j]] for j in t) for t in trains],
        normalizer_stats=[(m.normalizer.median, m.normalizer.mean, m.normalizer.scale)
                          for m in models],
        features=[names[c] for c in cols],
    )
    return probs, entry


def loo_evaluate(X, y, config: ModelConfig = ModelConfig(), seed: int = 0,
                 ensemble: Ensemble | str = Ensemble.AVERAGE,
                 ids: Optional[Sequence[str]] = None, names: Optional[Sequence[str]] = None,
                 selection: Optional[SelectionConfig] = None, k: int = 5,
                 jobs: int = 1) -> LooResult:
    """Leave-one-patient-out evaluation with a k-model inner ensemble.

    For every patient the remaining patients are split by stratified k-fold;
    each of the k training portions fits its own normalizer and classifier,
    and the held-out patient is scored by the ensemble. Optional pruning and
    forward selection run inside the outer training set only. Per-patient
    scores (mean member probability) and ensemble classes are pooled before
    the metrics are computed.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    n = len(y)
    if n < 10 or len(np.unique(y)) < 2:
        raise ProtocolError(f"LOO needs both classes and at least 10 patients, got {n}")
    ids = [str(j) for j in range(n)] if ids is None else [str(p) for p in ids]
    names = [f"f{j}" for j in range(X.shape[1])] if names is None else list(names)
    ensemble = Ensemble(ensemble)
    tasks = [(i, X, y, ids, names, config, seed, k, selection) for i in range(n)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_loo_one, tasks, chunksize=max(1, n // (4 * jobs))))
    else:
        outputs = [_loo_one(t) for t in tasks]
    member = np.array([o[0] for o in outputs])
    audit = [o[1] for o in outputs]
    check_audit(audit)
    scores = member.mean(axis=1)
    classes = np.array([ensemble_predict(p, ensemble) for p in member])
    report = compute_metrics(scores, classes, y)
    return LooResult(report, ids, y, scores, classes, member, ensemble, audit)


@dataclass
class KFoldResult:
    fold_reports: list[EvalReport]
    auc: Optional[float]
    tpr: Optional[float]
    fpr: Optional[float]
    mcc: float
    pooled: EvalReport
    scores: np.ndarray
    plan: FoldPlan

    def summary(self) -> dict:
        return {"auc": self.auc, "tpr": self.tpr, "fpr": self.fpr, "mcc": self.mcc}


def _mean_defined(values) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def kfold_evaluate(X, y, config: ModelConfig = ModelConfig(), seed: int = 0, k: int = 5,
                   names: Optional[Sequence[str]] = None,
                   selection: Optional[SelectionConfig] = None) -> KFoldResult:
    """Stratified k-fold CV; metrics are averaged over folds.

    With ``selection`` set, pruning and forward selection are redone on each
    fold's training portion.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    names = [f"f{j}" for j in range(X.shape[1])] if names is None else list(names)
    plan = stratified_kfold(y, k, substream(seed, "outer"))
    scores = np.full(len(y), np.nan)
    reports = []
    for f, val in enumerate(plan.folds):
        train = plan.train_index(f)
        cols = list(range(X.shape[1]))
        if selection is not None:
            cols = _select(X[train], y[train], names, config, selection,
                           substream(seed, "select", f), k)
        try:
            fitted = fit_model(config, X[train][:, cols], y[train],
                               seed=substream(seed, "fit", f))
        except TrainingError as exc:
            raise ProtocolError(f"fold {f}: {exc}") from exc
        p = fitted.predict_proba(X[val][:, cols])
        scores[val] = p
        reports.append(compute_metrics(p, p >= 0.5, y[val]))
    pooled = compute_metrics(scores, scores >= 0.5, y)
    return KFoldResult(
        reports,
        _mean_defined(r.auc for r in reports),
        _mean_defined(r.tpr for r in reports),
        _mean_defined(r.fpr for r in reports),
        float(np.mean([r.mcc for r in reports])),
        pooled, scores, plan,
    )
