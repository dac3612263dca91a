"""Reading, writing and synthesising CTG records.

Signal files are ``<patient_id>.csv`` with header ``t_s,fhr_bpm,uc`` sampled
at 4 Hz; an empty cell marks a missing sample. Clinical metadata for the whole
cohort lives in ``clinical.csv``.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import FS_HZ

log = logging.getLogger(__name__)

SIGNAL_HEADER = ("t_s", "fhr_bpm", "uc")
METADATA_HEADER = (
    "patient_id",
    "ph",
    "apgar5",
    "maternal_age",
    "parity",
    "gravidity",
    "gestation_weeks",
    "hypertension",
    "delivery_type",
    "stage1_min",
    "stage2_min",
)
DT = 1.0 / FS_HZ


class IngestError(ValueError):
    pass


class ParseError(IngestError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StructuralError(IngestError):
    pass


class DeliveryType(enum.Enum):
    VAGINAL = "V"
    OPERATIVE = "O"


@dataclass(frozen=True)
class ClinicalVars:
    maternal_age: Optional[float] = None
    parity: Optional[int] = None
    gravidity: Optional[int] = None
    gestation: Optional[float] = None
    hypertension: Optional[bool] = None
    delivery_type: Optional[DeliveryType] = None
    stage1_duration: Optional[float] = None
    stage2_duration: Optional[float] = None

    def __post_init__(self):
        for name in ("maternal_age", "parity", "gravidity", "gestation",
                     "stage1_duration", "stage2_duration"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise StructuralError(f"{name} must be non-negative, got {value}")


@dataclass(frozen=True)
class Outcomes:
    ph: Optional[float] = None
    apgar5: Optional[int] = None

    def __post_init__(self):
        if self.apgar5 is not None and not 0 <= self.apgar5 <= 10:
            raise StructuralError(f"apgar5 must lie in 0..10, got {self.apgar5}")
        if self.ph is not None and not 6.5 <= self.ph <= 7.6:
            raise StructuralError(f"ph must lie in [6.5, 7.6], got {self.ph}")


@dataclass(frozen=True, eq=False)
class CtgRecord:
    patient_id: str
    fhr: np.ndarray
    uc: np.ndarray
    clinical: ClinicalVars = field(default_factory=ClinicalVars)
    outcomes: Outcomes = field(default_factory=Outcomes)

    def __post_init__(self):
        fhr = np.array(self.fhr, dtype=float)
        uc = np.array(self.uc, dtype=float)
        if fhr.ndim != 1 or uc.ndim != 1:
            raise StructuralError("fhr and uc must be 1-D")
        if len(fhr) != len(uc):
            raise StructuralError(
                f"{self.patient_id}: fhr has {len(fhr)} samples but uc has {len(uc)}")
        if len(fhr) == 0:
            raise StructuralError(f"{self.patient_id}: record has no samples")
        fhr.flags.writeable = False
        uc.flags.writeable = False
        object.__setattr__(self, "fhr", fhr)
        object.__setattr__(self, "uc", uc)

    @property
    def fs(self) -> float:
        return FS_HZ

    def __len__(self) -> int:
        return len(self.fhr)

    def __eq__(self, other):
        if not isinstance(other, CtgRecord):
            return NotImplemented
        return (
            self.patient_id == other.patient_id
            and np.array_equal(self.fhr, other.fhr, equal_nan=True)
            and np.array_equal(self.uc, other.uc, equal_nan=True)
            and self.clinical == other.clinical
            and self.outcomes == other.outcomes
        )

    __hash__ = None  # type: ignore[assignment]


# -- parsing -----------------------------------------------------------------

def _reader(text) -> csv.reader:
    if isinstance(text, str):
        text = io.StringIO(text)
    return csv.reader(text)


def _float_cell(cell: str, what: str, line: int) -> float:
    cell = cell.strip()
    if cell == "":
        return math.nan
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"{what}: cannot parse {cell!r} as a number", line) from None
    if not math.isfinite(value):
        raise ParseError(f"{what}: non-finite value {cell!r}", line)
    return value


def parse_signal(signal_text) -> tuple[np.ndarray, np.ndarray]:
    """Parse a signal CSV into ``(fhr, uc)`` arrays with NaN for missing cells."""
    rows = _reader(signal_text)
    try:
        header = next(rows)
    except StopIteration:
        raise StructuralError("signal file is empty") from None
    header = [h.strip() for h in header]
    if len(header) != len(SIGNAL_HEADER):
        raise StructuralError(
            f"signal header has {len(header)} columns, expected {len(SIGNAL_HEADER)}")
    if tuple(header) != SIGNAL_HEADER:
        raise StructuralError(f"signal header {header} != {list(SIGNAL_HEADER)}")

    fhr, uc = [], []
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise ParseError(f"expected 3 columns, found {len(row)}", lineno)
        t = _float_cell(row[0], "t_s", lineno)
        k = len(fhr)
        if math.isnan(t) or abs(t - k * DT) > 1e-6:
            raise ParseError(f"t_s {row[0]!r} breaks the 0.25 s grid (expected {k * DT})",
                             lineno)
        fhr.append(_float_cell(row[1], "fhr_bpm", lineno))
        uc.append(_float_cell(row[2], "uc", lineno))
    if not fhr:
        raise StructuralError("signal file has no samples")
    return np.array(fhr), np.array(uc)


def _opt_float(row: Mapping[str, str], key: str) -> Optional[float]:
    cell = (row.get(key) or "").strip()
    if cell == "":
        return None
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"{key}: cannot parse {cell!r}") from None
    if not math.isfinite(value):
        raise ParseError(f"{key}: non-finite value {cell!r}")
    return value


def _opt_int(row: Mapping[str, str], key: str) -> Optional[int]:
    value = _opt_float(row, key)
    if value is None:
        return None
    if value != int(value):
        raise ParseError(f"{key}: expected an integer, got {row[key]!r}")
    return int(value)


def parse_metadata_row(row: Mapping[str, str]) -> tuple[str, ClinicalVars, Outcomes]:
    pid = (row.get("patient_id") or "").strip()
    if not pid:
        raise ParseError("patient_id is empty")
    hyp = _opt_int(row, "hypertension")
    if hyp not in (None, 0, 1):
        raise ParseError(f"hypertension must be 0 or 1, got {hyp}")
    dt_cell = (row.get("delivery_type") or "").strip()
    try:
        delivery = DeliveryType(dt_cell) if dt_cell else None
    except ValueError:
        raise ParseError(f"delivery_type must be V or O, got {dt_cell!r}") from None
    clinical = ClinicalVars(
        maternal_age=_opt_float(row, "maternal_age"),
        parity=_opt_int(row, "parity"),
        gravidity=_opt_int(row, "gravidity"),
        gestation=_opt_float(row, "gestation_weeks"),
        hypertension=None if hyp is None else bool(hyp),
        delivery_type=delivery,
        stage1_duration=_opt_float(row, "stage1_min"),
        stage2_duration=_opt_float(row, "stage2_min"),
    )
    outcomes = Outcomes(ph=_opt_float(row, "ph"), apgar5=_opt_int(row, "apgar5"))
    return pid, clinical, outcomes


def read_metadata(text) -> list[dict[str, str]]:
    """Parse ``clinical.csv`` text into row dicts; unknown columns are kept but unused."""
    if isinstance(text, str):
        text = io.StringIO(text)
    reader = csv.DictReader(text)
    if reader.fieldnames is None or "patient_id" not in reader.fieldnames:
        raise StructuralError("metadata header must contain patient_id")
    return [dict(row) for row in reader]


def parse_record(signal_text, metadata_row) -> CtgRecord:
    """Build a validated record from a signal CSV and one metadata row.

    ``metadata_row`` may be a mapping (as yielded by ``csv.DictReader``) or CSV
    text holding a header line and exactly one data row.
    """
    if isinstance(metadata_row, str):
        rows = read_metadata(metadata_row)
        if len(rows) != 1:
            raise StructuralError(f"expected one metadata row, got {len(rows)}")
        metadata_row = rows[0]
    pid, clinical, outcomes = parse_metadata_row(metadata_row)
    fhr, uc = parse_signal(signal_text)
    return CtgRecord(pid, fhr, uc, clinical, outcomes)


# -- writing -----------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, DeliveryType):
        return value.value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    return "" if math.isnan(value) else repr(value)


def format_signal(fhr: Sequence[float], uc: Sequence[float],
                  valid: Optional[Sequence[bool]] = None) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(SIGNAL_HEADER + (("valid",) if valid is not None else ()))
    for k, (f, u) in enumerate(zip(fhr, uc)):
        row = [repr(k * DT), _fmt(f), _fmt(u)]
        if valid is not None:
            row.append("1" if valid[k] else "0")
        w.writerow(row)
    return out.getvalue()


def metadata_row(record: CtgRecord) -> dict[str, str]:
    c, o = record.clinical, record.outcomes
    return {
        "patient_id": record.patient_id,
        "ph": _fmt(o.ph),
        "apgar5": _fmt(o.apgar5),
        "maternal_age": _fmt(c.maternal_age),
        "parity": _fmt(c.parity),
        "gravidity": _fmt(c.gravidity),
        "gestation_weeks": _fmt(c.gestation),
        "hypertension": _fmt(c.hypertension),
        "delivery_type": _fmt(c.delivery_type),
        "stage1_min": _fmt(c.stage1_duration),
        "stage2_min": _fmt(c.stage2_duration),
    }


def format_metadata(records: Sequence[CtgRecord]) -> str:
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=METADATA_HEADER, lineterminator="\n")
    w.writeheader()
    for rec in records:
        w.writerow(metadata_row(rec))
    return out.getvalue()


def serialize_record(record: CtgRecord) -> tuple[str, str]:
    """Inverse of :func:`parse_record`: ``(signal_text, metadata_text)``."""
    return format_signal(record.fhr, record.uc), format_metadata([record])


def write_dataset(records: Sequence[CtgRecord], directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for rec in records:
        (directory / f"{rec.patient_id}.csv").write_text(format_signal(rec.fhr, rec.uc))
    (directory / "clinical.csv").write_text(format_metadata(records))
    return directory


def load_dataset(directory) -> tuple[list[CtgRecord], list[str]]:
    """Load every patient listed in ``clinical.csv`` that has a signal file.

    Returns the records sorted by patient id and a list of diagnostics for
    patients that could not be loaded.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {directory}")
    meta_path = directory / "clinical.csv"
    if not meta_path.exists():
        return [], [f"no clinical.csv in {directory}"]
    records, diagnostics = [], []
    with open(meta_path, newline="") as fh:
        rows = read_metadata(fh)
    for lineno, row in enumerate(rows, start=2):
        pid = (row.get("patient_id") or "").strip()
        sig_path = directory / f"{pid}.csv"
        if not pid:
            diagnostics.append(f"clinical.csv line {lineno}: empty patient_id, skipped")
            continue
        if not sig_path.exists():
            diagnostics.append(f"{pid}: no signal file {sig_path.name}, skipped")
            continue
        try:
            with open(sig_path, newline="") as fh:
                records.append(parse_record(fh, row))
        except IngestError as exc:
            diagnostics.append(f"{pid}: {exc}")
    for msg in diagnostics:
        log.warning(msg)
    records.sort(key=lambda r: r.patient_id)
    return records, diagnostics


# -- synthetic records -------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Parameters of a synthetic CTG record.

    The FHR deviation from ``baseline_bpm`` follows the ARX recursion
    ``x(k) = sum_i alpha_i x(k-i) + sum_j beta_j u(k-j-d) + noise_sd * e(k)``
    where ``u`` is the UC trace minus its resting tone and ``d`` is the
    deceleration lag in samples. When ``switch_at_s`` is set, ``alpha_switch``
    and ``beta_switch`` replace the coefficients from that time onwards.
    """

    duration_s: float = 3600.0
    baseline_bpm: float = 140.0
    contraction_period_s: float = 180.0
    contraction_jitter_s: float = 30.0
    contraction_amplitude: float = 50.0
    contraction_width_s: float = 60.0
    uc_tone: float = 10.0
    decel_lag_s: float = 0.0
    alpha: tuple[float, ...] = (1.3, -0.4)
    beta: tuple[float, ...] = (-0.05,)
    alpha_switch: Optional[tuple[float, ...]] = None
    beta_switch: Optional[tuple[float, ...]] = None
    switch_at_s: Optional[float] = None
    noise_sd: float = 0.0
    missing_frac: float = 0.0
    spikes_per_hour: float = 0.0
    seed: int = 0
    patient_id: str = "synth"
    clinical: ClinicalVars = field(default_factory=ClinicalVars)
    outcomes: Outcomes = field(default_factory=Outcomes)

    def __post_init__(self):
        if not self.duration_s > 0:
            raise ValueError(f"duration_s must be positive, got {self.duration_s}")
        if not 0.0 <= self.missing_frac < 1.0:
            raise ValueError("missing_frac must lie in [0, 1)")
        has_switch = self.alpha_switch is not None or self.beta_switch is not None
        if has_switch and self.switch_at_s is None:
            raise ValueError("alpha_switch/beta_switch need switch_at_s")


def _contraction_train(n: int, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) * DT
    u = np.zeros(n)
    peak = cfg.contraction_period_s / 2
    sigma = cfg.contraction_width_s / 4
    while peak < t[-1] + cfg.contraction_width_s:
        amp = cfg.contraction_amplitude * rng.uniform(0.7, 1.3)
        u += amp * np.exp(-0.5 * ((t - peak) / sigma) ** 2)
        peak += cfg.contraction_period_s + rng.uniform(-1, 1) * cfg.contraction_jitter_s
    return u


def arx_simulate(u: np.ndarray, alpha: Sequence[float], beta: Sequence[float],
                 noise: Optional[np.ndarray] = None, lag: int = 0,
                 switch: Optional[tuple[int, Sequence[float], Sequence[float]]] = None
                 ) -> np.ndarray:
    """Run the ARX recursion with zero initial conditions."""
    n = len(u)
    x = np.zeros(n)
    e = np.zeros(n) if noise is None else noise
    a, b = list(alpha), list(beta)
    for k in range(n):
        if switch is not None and k == switch[0]:
            a, b = list(switch[1]), list(switch[2])
        acc = e[k]
        for i, ai in enumerate(a, start=1):
            if k - i >= 0:
                acc += ai * x[k - i]
        for j, bj in enumerate(b, start=1):
            if k - j - lag >= 0:
                acc += bj * u[k - j - lag]
        x[k] = acc
    return x


def _insert_gaps(n: int, frac: float, rng: np.random.Generator) -> np.ndarray:
    missing = np.zeros(n, dtype=bool)
    target = int(round(frac * n))
    while missing.sum() < target:
        length = int(rng.integers(5 * FS_HZ, 180 * FS_HZ))
        start = int(rng.integers(0, n))
        missing[start:start + length] = True
    return missing


def synth_record(config: SynthConfig) -> CtgRecord:
    """Generate a deterministic synthetic record from ``config``."""
    rng = np.random.default_rng(config.seed)
    n = int(round(config.duration_s * FS_HZ))
    if n < 1:
        raise ValueError("duration_s too short for one sample")
    u = _contraction_train(n, config, rng)
    noise = config.noise_sd * rng.standard_normal(n)
    lag = int(round(config.decel_lag_s * FS_HZ))
    switch = None
    if config.switch_at_s is not None:
        switch = (int(round(config.switch_at_s * FS_HZ)),
                  config.alpha_switch if config.alpha_switch is not None else config.alpha,
                  config.beta_switch if config.beta_switch is not None else config.beta)
    x = arx_simulate(u, config.alpha, config.beta, noise, lag, switch)
    fhr = config.baseline_bpm + x
    uc = config.uc_tone + u

    if config.spikes_per_hour > 0:
        count = rng.poisson(config.spikes_per_hour * config.duration_s / 3600.0)
        idx = rng.integers(0, n, size=count)
        fhr[idx] = rng.choice([30.0, 240.0], size=count)
    if config.missing_frac > 0:
        fhr[_insert_gaps(n, config.missing_frac, rng)] = np.nan
        uc[_insert_gaps(n, config.missing_frac / 2, rng)] = np.nan
    return CtgRecord(config.patient_id, fhr, uc, config.clinical, config.outcomes)


def poles_to_alpha(poles: Sequence[float]) -> tuple[float, ...]:
    """AR coefficients whose characteristic roots are ``poles`` (real)."""
    coeffs = np.poly(poles)  # z^n + c1 z^(n-1) + ...
    return tuple(float(-c) for c in coeffs[1:])


def synth_cohort(n_patients: int, seed: int = 0, prevalence: float = 0.15,
                 excluded_frac: float = 0.0, pole_gap: float = 0.3,
                 duration_s: float = 3750.0,
                 noise_sd: float = 1.0, max_missing_frac: float = 0.0,
                 clinical_signal: float = 1.0) -> list[CtgRecord]:
    """A labelled cohort where at-risk patients have regime-switching dynamics.

    Normal patients keep dominant pole 0.9 throughout; at-risk patients drop
    to ``0.9 - pole_gap`` halfway. Steady-state UC gain is held fixed so the
    response depth is the same in both regimes. Clinical variables shift with
    the label by ``clinical_signal`` standard deviations; signal quality is
    drawn independently of the label.
    """
    root = np.random.SeedSequence(seed)
    children = root.spawn(n_patients)
    records = []
    gain = -0.5  # bpm per UC unit at steady state
    for idx, child in enumerate(children):
        rng = np.random.default_rng(child)
        r = rng.uniform()
        if r < prevalence:
            label = "at_risk"
        elif r < prevalence + excluded_frac:
            label = "excluded"
        else:
            label = "normal"
        p1 = 0.9 + rng.uniform(-0.01, 0.01)
        p2 = 0.5 + rng.uniform(-0.05, 0.05)
        alpha = poles_to_alpha([p1, p2])
        beta = (gain * (1 - p1) * (1 - p2),)
        switch_kw = {}
        if label == "at_risk":
            q1 = p1 - pole_gap
            switch_kw = dict(alpha_switch=poles_to_alpha([q1, p2]),
                             beta_switch=(gain * (1 - q1) * (1 - p2),),
                             switch_at_s=duration_s / 2)
        shift = clinical_signal if label == "at_risk" else 0.0
        clinical = ClinicalVars(
            maternal_age=float(round(rng.normal(30, 5), 1)),
            parity=int(rng.poisson(0.6 + 0.4 * (shift < 0.5))),
            gravidity=int(1 + rng.poisson(1.0)),
            gestation=float(round(rng.normal(40.0 + 0.5 * shift, 1.0), 1)),
            hypertension=bool(rng.uniform() < 0.05 + 0.15 * min(shift, 1.0)),
            delivery_type=DeliveryType.OPERATIVE if rng.uniform() < 0.2 else DeliveryType.VAGINAL,
            stage1_duration=float(round(abs(rng.normal(240 + 60 * shift, 60)), 1)),
            stage2_duration=float(round(abs(rng.normal(15 + 10 * shift, 8)), 1)),
        )
        if label == "normal":
            outcomes = Outcomes(ph=round(float(rng.uniform(7.15, 7.40)), 2),
                                apgar5=int(rng.integers(9, 11)))
        elif label == "at_risk":
            outcomes = Outcomes(ph=round(float(rng.uniform(6.80, 7.00)), 2),
                                apgar5=int(rng.integers(4, 10)))
        else:
            outcomes = Outcomes(ph=round(float(rng.uniform(7.01, 7.14)), 2),
                                apgar5=int(rng.integers(7, 11)))
        cfg = SynthConfig(
            duration_s=duration_s,
            baseline_bpm=float(rng.uniform(125, 150)),
            alpha=alpha, beta=beta, noise_sd=noise_sd,
            missing_frac=float(rng.uniform(0, max_missing_frac)) if max_missing_frac else 0.0,
            seed=int(rng.integers(2**31)),
            patient_id=f"s{idx:04d}",
            clinical=clinical, outcomes=outcomes,
            **switch_kw,
        )
        records.append(synth_record(cfg))
    return records


def with_signals(record: CtgRecord, fhr=None, uc=None) -> CtgRecord:
    """Copy of ``record`` with replaced traces."""
    return replace(record,
                   fhr=record.fhr if fhr is None else fhr,
                   uc=record.uc if uc is None else uc)


__all__ = [
    "CtgRecord", "ClinicalVars", "Outcomes", "DeliveryType", "SynthConfig",
    "IngestError", "ParseError", "StructuralError",
    "parse_record", "parse_signal", "read_metadata", "serialize_record",
    "format_signal", "format_metadata", "write_dataset", "load_dataset",
    "synth_record", "synth_cohort", "arx_simulate", "poles_to_alpha", "with_signals",
]
