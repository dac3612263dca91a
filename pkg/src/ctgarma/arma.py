"""Windowed least-squares ARX model of the FHR response to contractions.

Each non-overlapping window is fitted with

    FHR(k) = sum_{i=1..n} alpha_i FHR(k-i) + sum_{j=1..m} beta_j UC(k-j) + e(k)

and summarised by the magnitudes of the roots of the AR characteristic
polynomial. The spread of each (magnitude-ranked) pole across windows is the
per-patient feature.

Sign convention: the characteristic polynomial is taken as
``z^n - alpha_1 z^(n-1) - ... - alpha_n``, the one implied by the recursion,
so a first-order model with ``alpha_1 = 0.9`` has its pole at 0.9. Pass
``literal_sign=True`` to use ``z^n + alpha_1 z^(n-1) + ... + alpha_n``
instead; for n >= 2 the two conventions give different magnitudes.

Regressor columns and target are mean-centred per window by default, which is
the same as fitting an intercept: a constant FHR level or UC tone does not
leak into the dynamics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .signals import CleanSignal

log = logging.getLogger(__name__)


class SingularDesignError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class ArmaConfig:
    n: int = 2
    m: int = 1
    window_len: int = 5000
    ridge: float = 0.0
    overlap: float = 0.0
    center: bool = True
    literal_sign: bool = False
    min_rows_factor: int = 10

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("ARX orders n and m must be at least 1")
        if self.window_len <= self.n + self.m:
            raise ValueError("window_len must exceed n + m")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError("overlap must lie in [0, 1)")


@dataclass(frozen=True)
class WindowModel:
    p: int
    theta: np.ndarray
    pole_mags: np.ndarray
    residual_var: float
    rows: int

    @property
    def alpha(self) -> np.ndarray:
        return self.theta[:len(self.pole_mags)]

    @property
    def beta(self) -> np.ndarray:
        return self.theta[len(self.pole_mags):]


@dataclass(frozen=True)
class ArmaFeatures:
    delta_r: Optional[np.ndarray]
    window_count: int
    models: list[WindowModel] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    def as_dict(self, n: int = 2) -> dict[str, Optional[float]]:
        if self.delta_r is None:
            return {f"delta_r{i + 1}": None for i in range(n)}
        return {f"delta_r{i + 1}": float(v) for i, v in enumerate(self.delta_r)}


def _as_arrays(sig) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(sig, CleanSignal):
        return np.asarray(sig.samples, dtype=float), np.asarray(sig.valid, dtype=bool)
    x = np.asarray(sig, dtype=float)
    return x, np.isfinite(x)


def build_regressor(fhr, uc, window: slice | range | tuple[int, int],
                    config: ArmaConfig) -> tuple[np.ndarray, np.ndarray]:
    """Regressor matrix and target for the samples in ``window``.

    Row for target index k is ``[FHR(k-1)..FHR(k-n), UC(k-1)..UC(k-m)]``;
    only targets whose lags fall inside the window are used, and rows touching
    an invalid sample are omitted.
    """
    y_all, y_ok = _as_arrays(fhr)
    u_all, u_ok = _as_arrays(uc)
    if isinstance(window, tuple):
        window = slice(*window)
    elif isinstance(window, range):
        window = slice(window.start, window.stop)
    y, yv = y_all[window], y_ok[window]
    u, uv = u_all[window], u_ok[window]
    n, m = config.n, config.m
    lag = max(n, m)
    ks = np.arange(lag, len(y))
    ok = yv[ks].copy()
    cols = []
    for i in range(1, n + 1):
        cols.append(y[ks - i])
        ok &= yv[ks - i]
    for j in range(1, m + 1):
        cols.append(u[ks - j])
        ok &= uv[ks - j]
    if len(ks) == 0:
        return np.empty((0, n + m)), np.empty(0)
    phi = np.column_stack(cols)[ok]
    target = y[ks][ok]
    return phi, target


def fit_window(phi, y, ridge: float = 0.0) -> np.ndarray:
    """Least-squares parameter vector via QR of the (ridge-augmented) design."""
    phi = np.asarray(phi, dtype=float)
    y = np.asarray(y, dtype=float)
    rows, cols = phi.shape
    if rows < cols:
        raise SingularDesignError(f"{rows} rows cannot determine {cols} parameters")
    if ridge > 0:
        phi = np.vstack([phi, np.sqrt(ridge) * np.eye(cols)])
        y = np.concatenate([y, np.zeros(cols)])
    q, r = np.linalg.qr(phi)
    diag = np.abs(np.diag(r))
    scale = max(diag.max(initial=0.0), np.finfo(float).tiny)
    # a rank tolerance in the spirit of numpy's matrix_rank
    tol = scale * max(phi.shape) * np.finfo(float).eps
    if np.any(diag <= tol):
        rank = int(np.sum(diag > tol))
        raise SingularDesignError(
            f"design matrix has rank {rank} < {cols}; columns are collinear "
            "(set ridge > 0 to regularise)")
    return np.linalg.solve(r, q.T @ y)


def poles(theta, n: int, literal_sign: bool = False) -> np.ndarray:
    """Magnitudes of the AR characteristic roots, largest first."""
    alpha = np.asarray(theta, dtype=float)[:n]
    if len(alpha) < n:
        raise ValueError(f"theta has {len(alpha)} entries, need at least {n}")
    coeffs = alpha if literal_sign else -alpha
    # companion matrix of z^n + c1 z^(n-1) + ... + cn
    comp = np.zeros((n, n))
    comp[0, :] = -coeffs
    if n > 1:
        comp[1:, :-1] = np.eye(n - 1)
    mags = np.abs(np.linalg.eigvals(comp))
    return np.sort(mags)[::-1]


def delta_r(models: Sequence[WindowModel], n: Optional[int] = None) -> Optional[np.ndarray]:
    """Range (max - min) of each ranked pole magnitude across windows.

    Returns None when there are no models.
    """
    if not models:
        return None
    mags = np.array([mdl.pole_mags for mdl in models])
    if n is not None and mags.shape[1] != n:
        raise ValueError("models disagree with the requested AR order")
    return mags.max(axis=0) - mags.min(axis=0)


def window_starts(length: int, config: ArmaConfig) -> list[int]:
    step = max(1, int(round(config.window_len * (1.0 - config.overlap))))
    return list(range(0, length - config.window_len + 1, step))


def fit_record(fhr, uc, config: ArmaConfig = ArmaConfig()) -> ArmaFeatures:
    """Fit every full window of a record and aggregate the pole spreads."""
    y_all, _ = _as_arrays(fhr)
    models, skipped = [], []
    starts = window_starts(len(y_all), config)
    for p, start in enumerate(starts):
        phi, y = build_regressor(fhr, uc, (start, start + config.window_len), config)
        need = config.min_rows_factor * (config.n + config.m)
        if len(y) < need:
            skipped.append(f"window {p}: {len(y)} usable rows < {need}")
            continue
        if config.center:
            phi = phi - phi.mean(axis=0)
            y = y - y.mean()
        try:
            theta = fit_window(phi, y, config.ridge)
        except SingularDesignError as exc:
            skipped.append(f"window {p}: {exc}")
            continue
        resid = y - phi @ theta
        models.append(WindowModel(p, theta, poles(theta, config.n, config.literal_sign),
                                  float(np.mean(resid ** 2)), len(y)))
    for msg in skipped:
        log.debug(msg)
    return ArmaFeatures(delta_r(models), len(models), models, skipped)


arma_pipeline = fit_record
