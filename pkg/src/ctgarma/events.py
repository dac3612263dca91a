"""Baseline estimation, acceleration/deceleration/contraction detection and
the Table-I style reassurance flags."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from . import FS_HZ
from .signals import CleanSignal

BASELINE_WINDOW_S = 600.0
BASELINE_SMOOTH_S = 60.0
BASELINE_MAX_SLOPE = 0.5  # bpm per sample
TONE_WINDOW_S = 600.0
TONE_QUANTILE = 0.10
PAIRING_WINDOW_S = 120.0
LATE_LAG_S = 20.0
PROLONGED_S = 180.0
FLAG_NAMES = ("baseline_nonreassuring", "variability_nonreassuring", "any_late_decel",
              "any_prolonged_decel", "repetitive_decels")


class EventKind(enum.Enum):
    ACCEL = "accel"
    DECEL = "decel"
    CONTRACTION = "contraction"


class DecelClass(enum.Enum):
    EARLY = "early"
    LATE = "late"
    UNPAIRED = "unpaired"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    start_idx: int
    end_idx: int  # inclusive
    peak_idx: int
    height: float
    prominence: float

    @property
    def duration_s(self) -> float:
        return (self.end_idx - self.start_idx + 1) / FS_HZ

    @property
    def start_s(self) -> float:
        return self.start_idx / FS_HZ

    @property
    def end_s(self) -> float:
        return (self.end_idx + 1) / FS_HZ

    @property
    def peak_s(self) -> float:
        return self.peak_idx / FS_HZ


@dataclass(frozen=True)
class DecelTiming:
    decel: Event
    contraction: Optional[Event]
    lag_s: Optional[float]
    decel_class: DecelClass


def _fill_edges(values: pd.Series) -> np.ndarray:
    return values.ffill().bfill().to_numpy()


def _clamp_slope(values: np.ndarray, max_step: float) -> np.ndarray:
    out = values.copy()
    for k in range(1, len(out)):
        lo, hi = out[k - 1] - max_step, out[k - 1] + max_step
        if out[k] < lo:
            out[k] = lo
        elif out[k] > hi:
            out[k] = hi
    return out


def baseline_from_mask(samples, valid) -> np.ndarray:
    """Per-sample FHR baseline from the valid samples of a trace.

    Centered 10-minute running median, 60 s running mean, then a slope clamp.
    """
    x = np.where(np.asarray(valid, dtype=bool), np.asarray(samples, dtype=float), np.nan)
    if not np.isfinite(x).any():
        raise ValueError("cannot estimate a baseline without valid samples")
    s = pd.Series(x)
    med = s.rolling(int(BASELINE_WINDOW_S * FS_HZ), center=True, min_periods=1).median()
    med = pd.Series(_fill_edges(med))
    smooth = med.rolling(int(BASELINE_SMOOTH_S * FS_HZ), center=True, min_periods=1).mean()
    return _clamp_slope(smooth.to_numpy(), BASELINE_MAX_SLOPE)


def estimate_baseline(fhr: CleanSignal) -> np.ndarray:
    return baseline_from_mask(fhr.samples, fhr.valid)


def uc_tone(uc: CleanSignal) -> np.ndarray:
    """Resting uterine tone: running 10th percentile of valid UC over 10 minutes."""
    x = np.where(uc.valid, uc.samples, np.nan)
    if not np.isfinite(x).any():
        raise ValueError("UC trace has no valid samples")
    s = pd.Series(x)
    tone = s.rolling(int(TONE_WINDOW_S * FS_HZ), center=True, min_periods=1).quantile(
        TONE_QUANTILE)
    return _fill_edges(tone)


def variability(fhr: CleanSignal, baseline) -> Optional[float]:
    """Mean per-minute peak-to-peak amplitude of the baseline-removed FHR."""
    detr = np.where(fhr.valid, fhr.samples - np.asarray(baseline), np.nan)
    per_min = int(60 * FS_HZ)
    amps = []
    for start in range(0, len(detr) - per_min + 1, per_min):
        chunk = detr[start:start + per_min]
        chunk = chunk[np.isfinite(chunk)]
        if len(chunk) >= per_min // 2:
            amps.append(chunk.max() - chunk.min())
    return float(np.mean(amps)) if amps else None


def _spans(mask: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate(([False], mask, [False]))
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def detect_events(signal: CleanSignal, baseline, kind: EventKind,
                  reference=None, min_duration_s: float = 10.0,
                  min_prominence_frac: float = 0.20, min_prominence: float = 0.0,
                  onset_frac: float = 0.0) -> list[Event]:
    """Find excursions of ``signal`` away from ``baseline``.

    ``baseline`` is the FHR baseline for accelerations/decelerations and the
    resting tone for contractions. An event is a maximal run of valid samples
    on the event side of ``baseline + onset`` (where ``onset`` is
    ``onset_frac`` times the required prominence) that lasts at least
    ``min_duration_s`` and whose peak excursion exceeds
    ``min_prominence_frac * reference`` at the peak (``reference`` defaults
    to ``baseline``) and ``min_prominence``. Runs that touch an invalid
    sample are dropped.
    """
    x = np.asarray(signal.samples, dtype=float)
    base = np.broadcast_to(np.asarray(baseline, dtype=float), x.shape)
    ref = base if reference is None else np.broadcast_to(np.asarray(reference, dtype=float),
                                                         x.shape)
    sign = -1.0 if kind is EventKind.DECEL else 1.0
    dev = sign * (x - base)
    required = np.maximum(min_prominence_frac * np.abs(ref), min_prominence)
    onset = onset_frac * required
    valid = np.asarray(signal.valid, dtype=bool)
    with np.errstate(invalid="ignore"):
        above = valid & (dev > onset)
    # invalid samples are bridged so a run broken by a gap can be recognised and dropped
    candidate = above | ~valid
    min_len = min_duration_s * FS_HZ
    events = []
    for start, stop in _spans(candidate):
        while start < stop and not valid[start]:
            start += 1
        while stop > start and not valid[stop - 1]:
            stop -= 1
        if stop - start < min_len or not valid[start:stop].all():
            continue
        peak = start + int(np.argmax(dev[start:stop]))
        prom = float(dev[peak])
        if not prom > required[peak]:
            continue
        height = float(x[peak] - base[peak])
        events.append(Event(kind, start, stop - 1, peak, height, prom))
    return events


def event_summary(events: Sequence[Event], trace_len_s: float, prefix: str) -> dict:
    out: dict[str, Optional[float]] = {f"{prefix}_count": float(len(events))}
    names = ("mean_duration", "max_duration", "mean_height", "max_height",
             "mean_prominence", "max_prominence", "ratio")
    if not events:
        out.update({f"{prefix}_{name}": None for name in names})
        return out
    dur = np.array([e.duration_s for e in events])
    hgt = np.array([e.height for e in events])
    prom = np.array([e.prominence for e in events])
    out[f"{prefix}_mean_duration"] = float(dur.mean())
    out[f"{prefix}_max_duration"] = float(dur.max())
    out[f"{prefix}_mean_height"] = float(hgt.mean())
    # largest excursion keeps its sign, so decelerations report a negative value
    out[f"{prefix}_max_height"] = float(hgt[np.argmax(np.abs(hgt))])
    out[f"{prefix}_mean_prominence"] = float(prom.mean())
    out[f"{prefix}_max_prominence"] = float(prom.max())
    out[f"{prefix}_ratio"] = float(dur.sum() / trace_len_s)
    return out


def pair_decels(decels: Sequence[Event], contractions: Sequence[Event],
                window_s: float = PAIRING_WINDOW_S) -> list[DecelTiming]:
    """Attach each deceleration to the latest contraction peaking within
    ``window_s`` before its onset."""
    peaks = np.array([c.peak_idx for c in contractions], dtype=float) / FS_HZ
    timings = []
    for d in decels:
        onset = d.start_idx / FS_HZ
        ok = np.flatnonzero((peaks <= onset) & (peaks >= onset - window_s))
        if len(ok) == 0:
            timings.append(DecelTiming(d, None, None, DecelClass.UNPAIRED))
            continue
        j = ok[np.argmax(peaks[ok])]
        lag = onset - peaks[j]
        cls = DecelClass.LATE if lag > LATE_LAG_S else DecelClass.EARLY
        timings.append(DecelTiming(d, contractions[j], float(lag), cls))
    return timings


def figo_flags(baseline, variability_bpm: Optional[float], timings: Sequence[DecelTiming],
               contractions: Sequence[Event], durations: Sequence[float]) -> dict[str, bool]:
    mean_base = float(np.nanmean(np.asarray(baseline, dtype=float)))
    paired = sum(t.decel_class is not DecelClass.UNPAIRED for t in timings)
    return {
        "baseline_nonreassuring": mean_base < 110 or mean_base > 160,
        "variability_nonreassuring": (variability_bpm is not None
                                      and (variability_bpm < 5 or variability_bpm > 25)),
        "any_late_decel": any(t.decel_class is DecelClass.LATE for t in timings),
        "any_prolonged_decel": any(d > PROLONGED_S for d in durations),
        "repetitive_decels": len(contractions) >= 1 and paired / len(contractions) > 0.5,
    }


@dataclass(frozen=True)
class EventConfig:
    min_duration_s: float = 10.0
    min_prominence_frac: float = 0.20
    uc_min_prominence: float = 5.0
    uc_onset_frac: float = 0.5
    pairing_window_s: float = PAIRING_WINDOW_S


@dataclass(frozen=True)
class EventAnalysis:
    baseline: np.ndarray
    tone: Optional[np.ndarray]
    variability: Optional[float]
    accels: list[Event]
    decels: list[Event]
    contractions: list[Event]
    timings: list[DecelTiming]
    flags: dict[str, bool]

    def features(self, trace_len_s: float) -> dict[str, Optional[float]]:
        out: dict[str, Optional[float]] = {}
        out.update(event_summary(self.accels, trace_len_s, "accel"))
        out.update(event_summary(self.decels, trace_len_s, "decel"))
        out.update(event_summary(self.contractions, trace_len_s, "contraction"))
        paired = [t for t in self.timings if t.lag_s is not None]
        out["decel_late_count"] = float(sum(t.decel_class is DecelClass.LATE
                                            for t in self.timings))
        out["decel_mean_lag"] = float(np.mean([t.lag_s for t in paired])) if paired else None
        out.update({k: None if self.flags.get(k) is None else float(self.flags[k])
                    for k in FLAG_NAMES})
        return out


def analyze_events(fhr: CleanSignal, uc: CleanSignal,
                   config: EventConfig = EventConfig()) -> EventAnalysis:
    baseline = estimate_baseline(fhr)
    var = variability(fhr, baseline)
    accels = detect_events(fhr, baseline, EventKind.ACCEL,
                           min_duration_s=config.min_duration_s,
                           min_prominence_frac=config.min_prominence_frac)
    decels = detect_events(fhr, baseline, EventKind.DECEL,
                           min_duration_s=config.min_duration_s,
                           min_prominence_frac=config.min_prominence_frac)
    tone = None
    contractions: list[Event] = []
    if uc.valid.any():
        tone = uc_tone(uc)
        contractions = detect_events(uc, tone, EventKind.CONTRACTION,
                                     min_duration_s=config.min_duration_s,
                                     min_prominence_frac=config.min_prominence_frac,
                                     min_prominence=config.uc_min_prominence,
                                     onset_frac=config.uc_onset_frac)
    timings = pair_decels(decels, contractions, config.pairing_window_s)
    flags = figo_flags(baseline, var, timings, contractions, [d.duration_s for d in decels])
    return EventAnalysis(baseline, tone, var, accels, decels, contractions, timings, flags)
