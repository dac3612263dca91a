"""Per-patient feature extraction and feature-set assembly."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
from scipy import signal as sps
from scipy.spatial import cKDTree

from . import FS_HZ
from .arma import ArmaConfig, ArmaFeatures, fit_record
from .events import EventAnalysis, EventConfig, analyze_events, variability
from .ingest import CtgRecord
from .preprocess import CleanRecord, PreprocessConfig, clean_record
from .signals import CleanSignal

AUTOCORR_LAG = 50
MIN_STAT_SAMPLES = 100
MIN_SPECTRAL_S = 600.0
MIN_ENTROPY_SAMPLES = 200
BANDS = {"lf": (0.03, 0.15), "mf": (0.15, 0.5), "hf": (0.5, 1.0)}

Value = Optional[float]


class AssemblyError(KeyError):
    pass


def autocorrelation(x, lag: int) -> Value:
    """Lagged autocorrelation normalised by the full-series variance."""
    x = np.asarray(x, dtype=float)
    if len(x) <= lag:
        return None
    var = x.var()
    if var == 0:
        return None
    d = x - x.mean()
    return float(np.dot(d[:-lag], d[lag:]) / ((len(x) - lag) * var))


def stat_features(fhr: CleanSignal, baseline=None) -> dict[str, Value]:
    names = ("fhr_range", "fhr_max", "fhr_min", "fhr_median", "fhr_mean", "fhr_std",
             "fhr_baseline_mean", "fhr_variability", "fhr_autocorr50")
    x = fhr.valid_values()
    if len(x) < MIN_STAT_SAMPLES:
        return dict.fromkeys(names)
    out: dict[str, Value] = {
        "fhr_range": float(x.max() - x.min()),
        "fhr_max": float(x.max()),
        "fhr_min": float(x.min()),
        "fhr_median": float(np.median(x)),
        "fhr_mean": float(x.mean()),
        "fhr_std": float(x.std()),
        "fhr_baseline_mean": None,
        "fhr_variability": None,
        "fhr_autocorr50": autocorrelation(x, AUTOCORR_LAG),
    }
    if baseline is not None:
        out["fhr_baseline_mean"] = float(np.mean(np.asarray(baseline)[fhr.valid]))
        out["fhr_variability"] = variability(fhr, baseline)
    return out


def _longest_valid_stretch(sig: CleanSignal) -> np.ndarray:
    padded = np.concatenate(([False], sig.valid, [False]))
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    starts, stops = edges[::2], edges[1::2]
    if len(starts) == 0:
        return np.empty(0)
    i = int(np.argmax(stops - starts))
    return np.asarray(sig.samples[starts[i]:stops[i]])


def band_powers(x, fs: float = FS_HZ, bands: Mapping[str, tuple[float, float]] = BANDS,
                nperseg: int = 1024) -> dict[str, float]:
    """Welch band powers of a linearly detrended series."""
    x = sps.detrend(np.asarray(x, dtype=float), type="linear")
    f, pxx = sps.welch(x, fs=fs, nperseg=min(nperseg, len(x)), detrend=False)
    df = f[1] - f[0]
    out = {}
    names = list(bands)
    for i, name in enumerate(names):
        lo, hi = bands[name]
        # the top band is closed on the right
        sel = (f >= lo) & ((f <= hi) if i == len(names) - 1 else (f < hi))
        out[name] = float(pxx[sel].sum() * df)
    return out


def freq_features(fhr: CleanSignal, bands=BANDS) -> dict[str, Value]:
    """Band powers over the longest uninterrupted valid stretch of FHR."""
    names = [f"fhr_{b}_power" for b in bands] + ["fhr_lf_mfhf_ratio"]
    x = _longest_valid_stretch(fhr)
    if len(x) < MIN_SPECTRAL_S * FS_HZ:
        return dict.fromkeys(names)
    p = band_powers(x, bands=bands)
    out: dict[str, Value] = {f"fhr_{b}_power": p[b] for b in bands}
    denom = p.get("mf", 0.0) + p.get("hf", 0.0)
    out["fhr_lf_mfhf_ratio"] = p["lf"] / denom if denom > 0 else None
    return out


def sample_entropy(x, m: int = 2, r_frac: float = 0.2) -> Value:
    """Sample entropy with tolerance ``r_frac * std``; None if undefined."""
    x = np.asarray(x, dtype=float)
    sd = x.std()
    if len(x) <= m + 1 or sd == 0:
        return None
    r = r_frac * sd
    n_templates = len(x) - m

    def pairs(length: int) -> int:
        emb = np.lib.stride_tricks.sliding_window_view(x, length)[:n_templates]
        tree = cKDTree(emb)
        # count_neighbors counts ordered pairs including self-matches
        return (int(tree.count_neighbors(tree, r, p=np.inf)) - n_templates) // 2

    b = pairs(m)
    a = pairs(m + 1)
    if a == 0 or b == 0:
        return None
    return float(-np.log(a / b))


def entropy_feature(fhr: CleanSignal) -> Value:
    x = fhr.valid_values()
    if len(x) < MIN_ENTROPY_SAMPLES:
        return None
    return sample_entropy(x)


def uc_features(uc: CleanSignal) -> dict[str, Value]:
    x = uc.valid_values()
    if len(x) < MIN_STAT_SAMPLES:
        return {"uc_mean": None, "uc_std": None, "uc_quality": uc.quality}
    return {"uc_mean": float(x.mean()), "uc_std": float(x.std()), "uc_quality": uc.quality}


class FeatureSet(enum.Enum):
    FS1 = "fs1"
    FS2 = "fs2"
    FS3 = "fs3"
    FS4 = "fs4"


FS1 = ("fhr_range", "fhr_max", "fhr_median", "fhr_autocorr50",
       "contraction_mean_prominence", "delta_r1", "delta_r2")
FS2 = FS1 + ("parity", "gestation", "hypertension")
FS3 = FS2 + ("stage1_min",)
FS4 = FS3 + ("stage2_min",)
FEATURE_SETS: dict[FeatureSet, tuple[str, ...]] = {
    FeatureSet.FS1: FS1, FeatureSet.FS2: FS2, FeatureSet.FS3: FS3, FeatureSet.FS4: FS4,
}
ARMA_ONLY = ("delta_r1", "delta_r2")


def clinical_features(record: CtgRecord) -> dict[str, Value]:
    c = record.clinical

    def num(v):
        return None if v is None else float(v)

    return {
        "maternal_age": num(c.maternal_age),
        "parity": num(c.parity),
        "gravidity": num(c.gravidity),
        "gestation": num(c.gestation),
        "hypertension": num(c.hypertension),
        "operative_delivery": (None if c.delivery_type is None
                               else float(c.delivery_type.value == "O")),
        "stage1_min": num(c.stage1_duration),
        "stage2_min": num(c.stage2_duration),
    }


@dataclass(frozen=True)
class FeatureVector:
    patient_id: str
    values: dict[str, Value]

    def array(self, names) -> np.ndarray:
        return np.array([np.nan if self.values[n] is None else self.values[n] for n in names],
                        dtype=float)


def assemble(patient_id: str, computed: Mapping[str, Value], names) -> FeatureVector:
    """Select ``names`` (a feature set or explicit list) from ``computed``."""
    if isinstance(names, FeatureSet):
        names = FEATURE_SETS[names]
    missing = [n for n in names if n not in computed]
    if missing:
        raise AssemblyError(f"features never computed: {missing}")
    values = {}
    for n in names:
        v = computed[n]
        values[n] = None if v is None or not np.isfinite(v) else float(v)
    return FeatureVector(patient_id, values)


def check_nesting() -> None:
    chain = [FEATURE_SETS[fs] for fs in FeatureSet]
    for small, big in zip(chain, chain[1:]):
        if not set(small) < set(big) or big[:len(small)] != small:
            raise AssertionError("feature sets must nest FS1 < FS2 < FS3 < FS4")


check_nesting()


@dataclass(frozen=True)
class PatientAnalysis:
    """Everything computed for one patient on the way to its feature map."""

    record: CtgRecord
    clean: CleanRecord
    events: Optional[EventAnalysis]
    arma: ArmaFeatures
    features: dict[str, Value]

    @property
    def patient_id(self) -> str:
        return self.record.patient_id


def analyze_record(record: CtgRecord,
                   preprocess: PreprocessConfig = PreprocessConfig(),
                   arma: ArmaConfig = ArmaConfig(),
                   events: EventConfig = EventConfig()) -> PatientAnalysis:
    clean = clean_record(record, preprocess)
    trace_len_s = len(record) / FS_HZ
    feats: dict[str, Value] = {"fhr_quality": clean.fhr.quality}
    ev = None
    if clean.fhr.valid.any():
        ev = analyze_events(clean.fhr, clean.uc, events)
        feats.update(stat_features(clean.fhr, ev.baseline))
        feats.update(ev.features(trace_len_s))
    else:
        feats.update(stat_features(clean.fhr))
        empty = EventAnalysis(np.full(len(record), np.nan), None, None, [], [], [], [], {})
        feats.update(empty.features(trace_len_s))
    feats.update(freq_features(clean.fhr))
    feats["fhr_sampen"] = entropy_feature(clean.fhr)
    feats.update(uc_features(clean.uc))
    arma_feats = fit_record(clean.fhr, clean.uc, arma)
    feats.update(arma_feats.as_dict(arma.n))
    feats["arma_windows"] = float(arma_feats.window_count)
    feats.update(clinical_features(record))
    return PatientAnalysis(record, clean, ev, arma_feats, feats)
