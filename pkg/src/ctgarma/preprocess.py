"""FHR/UC artifact removal.

Stages run in a fixed order, each only ever clearing validity:
range outliers, spikes against a trailing moving average, maternal-heart-rate
segments, then linear interpolation of short gaps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import FS_HZ
from .signals import CleanSignal

log = logging.getLogger(__name__)


class ExclusionError(ValueError):
    """Raised when a trace has no usable samples at all."""


@dataclass(frozen=True)
class PreprocessConfig:
    fhr_min: float = 50.0
    fhr_max: float = 210.0
    spike_window_s: float = 60.0
    spike_ratio: float = 0.30
    mhr_step_bpm: float = 25.0
    mhr_drop_bpm: float = 35.0
    mhr_min_run_s: float = 10.0
    max_interp_s: float = 15.0
    exclusion_quality: float = 0.70


@dataclass
class Diagnostics:
    unjudged_spike_samples: int = 0
    mhr_runs: list[tuple[int, int]] = field(default_factory=list)


def mask_outliers(raw, fhr_min: float = 50.0, fhr_max: float = 210.0) -> np.ndarray:
    """True where a sample is present and inside ``[fhr_min, fhr_max]``."""
    raw = np.asarray(raw, dtype=float)
    with np.errstate(invalid="ignore"):
        return np.isfinite(raw) & (raw >= fhr_min) & (raw <= fhr_max)


def mask_spikes(raw, valid, window_s: float = 60.0, ratio: float = 0.30,
                diagnostics: Diagnostics | None = None) -> np.ndarray:
    """Clear samples deviating from the trailing valid-sample mean by more than ``ratio``.

    The mean covers the ``window_s`` seconds strictly before each sample and
    only samples still valid at that point, so a spike never drags the
    reference for its neighbours. Samples with an empty window stay as they are.
    """
    raw = np.asarray(raw, dtype=float)
    out = np.array(valid, dtype=bool, copy=True)
    w = int(round(window_s * FS_HZ))
    total = 0.0
    count = 0
    unjudged = 0
    for k in range(len(raw)):
        old = k - w - 1
        if old >= 0 and out[old]:
            total -= raw[old]
            count -= 1
        prev = k - 1
        if prev >= 0 and out[prev]:
            total += raw[prev]
            count += 1
        if not out[k]:
            continue
        if count == 0:
            unjudged += 1
            continue
        mean = total / count
        if abs(raw[k] - mean) > ratio * abs(mean):
            out[k] = False
    if diagnostics is not None:
        diagnostics.unjudged_spike_samples += unjudged
    return out


def mask_mhr(raw, valid, baseline, step_bpm: float = 25.0, drop_bpm: float = 35.0,
             min_run_s: float = 10.0, diagnostics: Diagnostics | None = None) -> np.ndarray:
    """Clear runs that sit well below baseline between two abrupt jumps.

    Jumps are measured between consecutive valid samples. A run is masked when
    it is entered and left through jumps larger than ``step_bpm``, lasts at
    least ``min_run_s`` and its median lies more than ``drop_bpm`` below the
    baseline over the run.
    """
    raw = np.asarray(raw, dtype=float)
    baseline = np.broadcast_to(np.asarray(baseline, dtype=float), raw.shape)
    out = np.array(valid, dtype=bool, copy=True)
    idx = np.flatnonzero(out)
    if len(idx) < 2:
        return out
    steps = np.abs(np.diff(raw[idx]))
    jumps = np.flatnonzero(steps > step_bpm) + 1  # positions in idx where a new run starts
    min_len = min_run_s * FS_HZ
    for a, b in zip(jumps[:-1], jumps[1:]):
        run = idx[a:b]
        if run[-1] - run[0] + 1 < min_len:
            continue
        if np.median(raw[run]) < np.nanmedian(baseline[run]) - drop_bpm:
            out[run] = False
            if diagnostics is not None:
                diagnostics.mhr_runs.append((int(run[0]), int(run[-1])))
    return out


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open ``(start, stop)`` spans where ``mask`` is True."""
    padded = np.concatenate(([False], mask, [False]))
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def fill_gaps(raw, valid, max_interp_s: float = 15.0) -> CleanSignal:
    """Interpolate interior gaps up to ``max_interp_s``; longer gaps stay invalid."""
    raw = np.asarray(raw, dtype=float)
    valid = np.asarray(valid, dtype=bool)
    n = len(raw)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ExclusionError("trace has no valid samples")
    quality = n_valid / n
    samples = np.where(valid, raw, np.nan)
    use = valid.copy()
    interp = np.zeros(n, dtype=bool)
    cap = max_interp_s * FS_HZ
    for start, stop in _runs(~valid):
        if start == 0 or stop == n or stop - start > cap:
            continue
        left, right = samples[start - 1], samples[stop]
        frac = np.arange(1, stop - start + 1) / (stop - start + 1)
        samples[start:stop] = left + frac * (right - left)
        use[start:stop] = True
        interp[start:stop] = True
    return CleanSignal(samples, use, quality, interp)


def exclude_patient(fhr_quality: float, threshold: float = 0.70) -> bool:
    """Patients missing more than 30% of the FHR trace are dropped."""
    return fhr_quality < threshold


def quality_tier(fhr_quality: float, threshold: float) -> bool:
    return fhr_quality >= threshold


def clean_fhr(raw, config: PreprocessConfig = PreprocessConfig(),
              diagnostics: Diagnostics | None = None) -> CleanSignal:
    from .events import baseline_from_mask

    raw = np.asarray(raw, dtype=float)
    valid = mask_outliers(raw, config.fhr_min, config.fhr_max)
    valid = mask_spikes(raw, valid, config.spike_window_s, config.spike_ratio, diagnostics)
    if valid.any():
        baseline = baseline_from_mask(raw, valid)
        valid = mask_mhr(raw, valid, baseline, config.mhr_step_bpm, config.mhr_drop_bpm,
                         config.mhr_min_run_s, diagnostics)
    return fill_gaps(raw, valid, config.max_interp_s)


def clean_uc(raw, config: PreprocessConfig = PreprocessConfig()) -> CleanSignal:
    raw = np.asarray(raw, dtype=float)
    return fill_gaps(raw, np.isfinite(raw), config.max_interp_s)


def empty_signal(n: int) -> CleanSignal:
    """All-invalid placeholder for a channel with no usable data."""
    return CleanSignal(np.full(n, np.nan), np.zeros(n, dtype=bool), 0.0)


@dataclass(frozen=True)
class CleanRecord:
    patient_id: str
    fhr: CleanSignal
    uc: CleanSignal
    excluded: bool
    diagnostics: Diagnostics


def clean_record(record, config: PreprocessConfig = PreprocessConfig()) -> CleanRecord:
    """Clean both channels; channels with nothing usable become all-invalid."""
    diag = Diagnostics()
    n = len(record.fhr)
    try:
        fhr = clean_fhr(record.fhr, config, diag)
    except ExclusionError:
        log.info("%s: FHR has no valid samples", record.patient_id)
        fhr = empty_signal(n)
    try:
        uc = clean_uc(record.uc, config)
    except ExclusionError:
        log.info("%s: UC has no valid samples", record.patient_id)
        uc = empty_signal(n)
    excluded = exclude_patient(fhr.quality, config.exclusion_quality)
    return CleanRecord(record.patient_id, fhr, uc, excluded, diag)
