"""Run configuration, cohort-level orchestration and the tabular outputs."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import FS_HZ, __version__
from .arma import ArmaConfig
from .events import EventConfig
from .features import ARMA_ONLY, FEATURE_SETS, FeatureSet, PatientAnalysis, analyze_record
from .ingest import CtgRecord, format_signal
from .labels import Label, assign_label, cohort_summary
from .ml import (Ensemble, ModelConfig, SelectionConfig, compute_metrics, fit_model,
                 kfold_evaluate, loo_evaluate, substream)
from .preprocess import PreprocessConfig, exclude_patient, quality_tier

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """A user-supplied setting is invalid."""


# -- configuration -------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    data: Optional[str] = None
    out: str = "run"
    seed: int = 0
    jobs: int = 1
    preprocess: PreprocessConfig = PreprocessConfig()
    arma: ArmaConfig = ArmaConfig()
    events: EventConfig = EventConfig()
    features: str = "fs1"
    model: ModelConfig = ModelConfig()
    mode: str = "loo"
    ensemble: str = "avg"
    quality_min: float = 0.0
    select: bool = False
    prune_threshold: float = 0.88
    svm_train_size: int = 35

    # flat key -> (section, field)
    _FLAT = {
        "spike_window_s": ("preprocess", "spike_window_s"),
        "max_interp_s": ("preprocess", "max_interp_s"),
        "mhr_step_bpm": ("preprocess", "mhr_step_bpm"),
        "mhr_drop_bpm": ("preprocess", "mhr_drop_bpm"),
        "arma_n": ("arma", "n"),
        "arma_m": ("arma", "m"),
        "window_len": ("arma", "window_len"),
        "ridge": ("arma", "ridge"),
        "literal_sign": ("arma", "literal_sign"),
        "model": ("model", "kind"),
        "l2": ("model", "l2"),
        "C": ("model", "C"),
        "kernel": ("model", "kernel"),
        "gamma": ("model", "gamma"),
        "class_weight": ("model", "class_weight"),
        "absence_indicators": ("model", "indicators"),
    }

    def to_flat(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            if f.name in ("preprocess", "arma", "events", "model"):
                continue
            out[f.name] = getattr(self, f.name)
        for key, (section, name) in self._FLAT.items():
            out[key] = getattr(getattr(self, section), name)
        return out

    @classmethod
    def from_flat(cls, flat: dict) -> "RunConfig":
        top = {f.name: f for f in dataclasses.fields(cls)}
        sections: dict[str, dict] = {"preprocess": {}, "arma": {}, "model": {}}
        kwargs = {}
        for key, value in flat.items():
            if key in cls._FLAT:
                section, name = cls._FLAT[key]
                sections[section][name] = value
            elif key in top and key not in ("preprocess", "arma", "events", "model"):
                kwargs[key] = value
            else:
                raise ConfigError(f"unknown configuration key {key!r}")
        try:
            cfg = cls(preprocess=PreprocessConfig(**sections["preprocess"]),
                      arma=ArmaConfig(**sections["arma"]),
                      model=ModelConfig(**sections["model"]), **kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.mode not in ("5fold", "loo"):
            raise ConfigError(f"mode must be 5fold or loo, got {self.mode!r}")
        if self.ensemble not in ("avg", "vote"):
            raise ConfigError(f"ensemble must be avg or vote, got {self.ensemble!r}")
        if not 0.0 <= self.quality_min <= 1.0:
            raise ConfigError("quality_min must lie in [0, 1]")
        feature_names(self.features)


def feature_names(spec: str) -> tuple[str, ...]:
    """Resolve ``fs1``..``fs4``, ``arma`` or ``file:<path>`` to feature names."""
    if spec.startswith("file:"):
        path = Path(spec[5:])
        if not path.exists():
            raise ConfigError(f"feature list file not found: {path}")
        names = [ln.split("#")[0].strip() for ln in path.read_text().splitlines()]
        names = [n for n in names if n]
        if not names:
            raise ConfigError(f"feature list {path} is empty")
        return tuple(names)
    if spec == "arma":
        return ARMA_ONLY
    try:
        return FEATURE_SETS[FeatureSet(spec.lower())]
    except ValueError:
        raise ConfigError(f"unknown feature set {spec!r}") from None


# -- per-patient analysis ------------------------------------------------------

def _analyze(args) -> PatientAnalysis:
    record, cfg = args
    return analyze_record(record, cfg.preprocess, cfg.arma, cfg.events)


def analyze_all(records: Sequence[CtgRecord], cfg: RunConfig) -> list[PatientAnalysis]:
    tasks = [(r, cfg) for r in records]
    if cfg.jobs > 1 and len(records) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            return list(pool.map(_analyze, tasks, chunksize=4))
    return [_analyze(t) for t in tasks]


@dataclass
class Cohort:
    """Patients eligible for a classification experiment."""

    analyses: list[PatientAnalysis]
    labels: np.ndarray
    quality: np.ndarray

    @property
    def ids(self) -> list[str]:
        return [a.patient_id for a in self.analyses]

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        missing = [n for n in names if self.analyses and n not in self.analyses[0].features]
        if missing:
            raise ConfigError(f"features never computed: {missing}")
        return np.array([[np.nan if a.features[n] is None else a.features[n] for n in names]
                         for a in self.analyses], dtype=float).reshape(len(self.analyses),
                                                                       len(names))


def build_cohort(analyses: Sequence[PatientAnalysis], quality_min: float = 0.0,
                 apply_exclusion: bool = True, exclusion_quality: float = 0.70) -> Cohort:
    keep, labels, quality = [], [], []
    for a in analyses:
        label = assign_label(a.record.outcomes)
        q = a.clean.fhr.quality
        if label is Label.EXCLUDED:
            continue
        if apply_exclusion and exclude_patient(q, exclusion_quality):
            continue
        if not quality_tier(q, quality_min):
            continue
        keep.append(a)
        labels.append(label.target)
        quality.append(q)
    return Cohort(keep, np.array(labels, dtype=int), np.array(quality))


# -- experiments ---------------------------------------------------------------

def _clean_float(v):
    if v is None:
        return None
    v = float(v)
    return None if math.isnan(v) else v


def evaluate(analyses: Sequence[PatientAnalysis], cfg: RunConfig) -> dict:
    """Run the configured classifier experiment and return a JSON-ready report."""
    cohort = build_cohort(analyses, cfg.quality_min, True, cfg.preprocess.exclusion_quality)
    names = list(feature_names(cfg.features))
    X = cohort.matrix(names)
    y = cohort.labels
    selection = SelectionConfig(cfg.prune_threshold) if cfg.select else None
    report: dict = {
        "mode": cfg.mode, "model": cfg.model.kind, "features": names,
        "ensemble": cfg.ensemble, "quality_min": cfg.quality_min, "seed": cfg.seed,
        "n_patients": int(len(y)), "n_at_risk": int(y.sum()),
    }
    if cfg.mode == "loo":
        res = loo_evaluate(X, y, cfg.model, cfg.seed, Ensemble(cfg.ensemble), ids=cohort.ids,
                           names=names, selection=selection, jobs=cfg.jobs)
        metrics = res.report
        report["patients"] = res.per_patient()
        if selection is not None:
            report["selected_features"] = {e.held_out: e.features for e in res.audit}
    else:
        res = kfold_evaluate(X, y, cfg.model, cfg.seed, names=names, selection=selection)
        metrics = res.pooled
        report["fold_mean"] = res.summary()
        report["folds"] = [{k: v for k, v in r.as_dict().items() if k != "roc"}
                           for r in res.fold_reports]
        report["fold_plan"] = res.plan.ids(cohort.ids)
        report["patients"] = [{"patient_id": pid, "label": int(lab), "score": float(s)}
                              for pid, lab, s in zip(cohort.ids, y, res.scores)]
    report["metrics"] = {k: v for k, v in metrics.as_dict().items() if k != "roc"}
    report["roc"] = metrics.roc
    return report


def svm_training_split(cohort: Cohort, size: int = 35) -> tuple[np.ndarray, np.ndarray]:
    """Indices of the highest-quality patients used to train the ARMA-only SVM.

    About a third of the training set is at-risk, capped at half of the
    available at-risk patients so that some remain for testing.
    """
    y, q = cohort.labels, cohort.quality
    n_pos_avail = int(y.sum())
    n_pos = min(math.ceil(size / 3), n_pos_avail // 2)
    n_neg = size - n_pos
    # stable sort keeps id order among equal qualities
    order = np.argsort(-q, kind="stable")
    pos = [i for i in order if y[i] == 1][:n_pos]
    neg = [i for i in order if y[i] == 0][:n_neg]
    train = np.array(sorted(pos + neg), dtype=int)
    test = np.setdiff1d(np.arange(len(y)), train)
    return train, test


TABLE_II_TIERS = (0.0, 0.75, 0.80)


def table_ii(analyses: Sequence[PatientAnalysis], cfg: RunConfig) -> list[dict]:
    """ARMA-only SVM trained on a high-quality subset, tested across quality tiers."""
    cohort = build_cohort(analyses, 0.0, apply_exclusion=False)
    names = list(ARMA_ONLY)
    X = cohort.matrix(names)
    have = ~np.isnan(X).any(axis=1)
    cohort = Cohort([a for a, h in zip(cohort.analyses, have) if h], cohort.labels[have],
                    cohort.quality[have])
    X = X[have]
    train, test = svm_training_split(cohort, cfg.svm_train_size)
    model_cfg = dataclasses.replace(cfg.model, kind="svm")
    fitted = fit_model(model_cfg, X[train], cohort.labels[train],
                       seed=substream(cfg.seed, "svm"))
    scores = fitted.decision(X[test])
    y_test = cohort.labels[test]
    q_test = cohort.quality[test]
    rows = []
    for tier in TABLE_II_TIERS:
        sel = np.array([quality_tier(q, tier) for q in q_test], dtype=bool)
        n_pos, n_neg = int(y_test[sel].sum()), int((1 - y_test[sel]).sum())
        row = {"tier": tier, "n": int(sel.sum()), "n_at_risk": n_pos, "available": True,
               "auc": None, "tpr": None, "fpr": None}
        if n_pos < 2 or n_neg < 2:
            row["available"] = False
        else:
            rep = compute_metrics(scores[sel], scores[sel] >= 0, y_test[sel])
            row.update(auc=rep.auc, tpr=rep.tpr, fpr=rep.fpr)
        rows.append(row)
    return rows


TABLE_III_SETS = ("arma", "fs1", "fs2", "fs3", "fs4")


def table_iii(analyses: Sequence[PatientAnalysis], cfg: RunConfig,
              sets: Sequence[str] = TABLE_III_SETS) -> list[dict]:
    """Logistic regression, 5-fold and LOO, for each feature set on one cohort."""
    cohort = build_cohort(analyses, cfg.quality_min, True, cfg.preprocess.exclusion_quality)
    model_cfg = dataclasses.replace(cfg.model, kind="logreg")
    rows = []
    for spec in sets:
        names = list(feature_names(spec))
        X = cohort.matrix(names)
        cv = kfold_evaluate(X, cohort.labels, model_cfg, cfg.seed)
        loo = loo_evaluate(X, cohort.labels, model_cfg, cfg.seed, Ensemble(cfg.ensemble),
                           ids=cohort.ids, names=names, jobs=cfg.jobs)
        rows.append({
            "features": spec, "n_features": len(names), "n_patients": int(len(cohort.labels)),
            "cv_auc": cv.auc, "cv_tpr": cv.tpr, "cv_fpr": cv.fpr,
            "loo_auc": loo.report.auc, "loo_tpr": loo.report.tpr, "loo_fpr": loo.report.fpr,
            "fold_plan": [list(map(int, f)) for f in cv.plan.folds],
        })
    return rows


# -- writers -------------------------------------------------------------------

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o)}")


def clean_summary_rows(analyses):
    for a in analyses:
        d = a.clean.diagnostics
        yield (a.patient_id, a.clean.fhr.quality, a.clean.uc.quality, a.clean.excluded,
               d.unjudged_spike_samples, len(d.mhr_runs))


CLEAN_SUMMARY_HEADER = ("patient_id", "fhr_quality", "uc_quality", "excluded",
                        "spike_unjudged", "mhr_runs")


def cleaned_signal_csv(a: PatientAnalysis) -> str:
    return format_signal(a.clean.fhr.samples, a.clean.uc.samples, a.clean.fhr.valid)


EVENT_HEADER = ("kind", "start_s", "end_s", "duration_s", "height", "prominence", "lag_s",
                "class")


def event_rows(a: PatientAnalysis):
    if a.events is None:
        return []
    timing = {id(t.decel): t for t in a.events.timings}
    rows = []
    for ev in sorted(a.events.accels + a.events.decels + a.events.contractions,
                     key=lambda e: (e.start_idx, e.kind.value)):
        t = timing.get(id(ev))
        rows.append((ev.kind.value, ev.start_s, ev.end_s, ev.duration_s, ev.height,
                     ev.prominence, None if t is None else t.lag_s,
                     None if t is None else t.decel_class.value))
    return rows


ARMA_WINDOW_HEADER = ("patient_id", "p", "alpha1", "alpha2", "beta1", "polemag1", "polemag2",
                      "residual_var")


def arma_window_header(n: int, m: int) -> tuple[str, ...]:
    return (("patient_id", "p") + tuple(f"alpha{i + 1}" for i in range(n))
            + tuple(f"beta{j + 1}" for j in range(m))
            + tuple(f"polemag{i + 1}" for i in range(n)) + ("residual_var",))


def arma_window_rows(analyses):
    for a in analyses:
        for mdl in a.arma.models:
            yield (a.patient_id, mdl.p, *map(float, mdl.theta), *map(float, mdl.pole_mags),
                   mdl.residual_var)


def arma_summary_rows(analyses, n: int):
    for a in analyses:
        d = a.arma.as_dict(n)
        yield (a.patient_id, a.arma.window_count, *[d[f"delta_r{i + 1}"] for i in range(n)])


def label_rows(analyses):
    for a in analyses:
        yield a.patient_id, assign_label(a.record.outcomes).value


def feature_rows(analyses, names):
    for a in analyses:
        yield (a.patient_id, *[a.features[n] for n in names])


def all_feature_names(analyses) -> list[str]:
    return list(analyses[0].features) if analyses else []


def roc_rows(roc):
    for t, f, r in roc:
        yield ("inf" if math.isinf(t) else repr(float(t)), f, r)


def summary(analyses) -> dict:
    labels = [assign_label(a.record.outcomes) for a in analyses]
    flags = [a.clean.excluded for a in analyses]
    s = cohort_summary(labels, flags)
    return {"normal": s.normal, "at_risk": s.at_risk, "excluded": s.excluded,
            "quality_excluded": s.quality_excluded, "total": len(analyses)}


def manifest(cfg: RunConfig, outputs: Sequence[str], diagnostics: Sequence[str] = (),
             partial: bool = False, cohort: Optional[dict] = None) -> dict:
    return {
        "tool": "ctgarma", "version": __version__, "sampling_hz": FS_HZ,
        "config": cfg.to_flat(), "outputs": sorted(outputs),
        "partial": partial, "diagnostics": list(diagnostics), "cohort": cohort or {},
    }


def format_table(rows: Sequence[dict], columns: Sequence[str]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return out.getvalue()


__all__ = ["RunConfig", "ConfigError", "feature_names", "analyze_all", "build_cohort",
           "evaluate", "table_ii", "table_iii", "svm_training_split", "manifest", "Cohort"]
