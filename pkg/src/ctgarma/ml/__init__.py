"""Classifiers, evaluation protocols, metrics and feature selection."""

from .folds import FoldPlan, stratified_kfold, substream
from .metrics import (EvalReport, auc_score, compute_metrics, confusion, mcc_from_confusion,
                      roc_points)
from .models import (FittedModel, LogRegModel, ModelConfig, Normalizer, SvmModel,
                     TrainingError, fit_model, train_logreg, train_svm)
from .protocol import (AuditEntry, Ensemble, KFoldResult, LooResult, ProtocolError, SelectionConfig,
                       check_audit, ensemble_predict, kfold_evaluate, loo_evaluate)
from .selection import PruneResult, SelectionResult, forward_select, pearson_prune

__all__ = [
    "FoldPlan", "stratified_kfold", "substream",
    "EvalReport", "auc_score", "compute_metrics", "confusion", "mcc_from_confusion", "roc_points",
    "FittedModel", "LogRegModel", "ModelConfig", "Normalizer", "SvmModel", "TrainingError",
    "fit_model", "train_logreg", "train_svm",
    "AuditEntry", "Ensemble", "KFoldResult", "LooResult", "ProtocolError", "SelectionConfig",
    "check_audit", "ensemble_predict", "kfold_evaluate", "loo_evaluate",
    "PruneResult", "SelectionResult", "forward_select", "pearson_prune",
]
