"""Feature scaling, class-weighted logistic regression and a soft-margin SVM.

Both classifiers are small, deterministic solvers: Newton's method with a
backtracking line search for the logistic loss, and SMO with second-order
working-set selection for the SVM dual.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class TrainingError(ValueError):
    pass


# -- normalisation -------------------------------------------------------------

@dataclass(frozen=True)
class Normalizer:
    median: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    indicators: bool = False

    @classmethod
    def fit(cls, X, indicators: bool = False) -> "Normalizer":
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] == 0:
            raise TrainingError("cannot fit a normalizer on an empty training set")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns
            median = np.nanmedian(X, axis=0)
        median = np.where(np.isfinite(median), median, 0.0)
        filled = np.where(np.isnan(X), median, X)
        mean = filled.mean(axis=0)
        std = filled.std(axis=0)
        # constant features are centred but not divided
        scale = np.where(std > 1e-12 * np.maximum(np.abs(mean), 1.0), std, 1.0)
        return cls(median, mean, scale, indicators)

    def transform(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        missing = np.isnan(X)
        Z = (np.where(missing, self.median, X) - self.mean) / self.scale
        if self.indicators:
            Z = np.hstack([Z, missing.astype(float)])
        return Z


# -- logistic regression -------------------------------------------------------

def balanced_weights(y) -> np.ndarray:
    """Per-sample weights inversely proportional to class frequency (mean 1)."""
    y = np.asarray(y).astype(int)
    n = len(y)
    counts = np.bincount(y, minlength=2)
    if np.any(counts == 0):
        raise TrainingError("both classes must be present in the training set")
    return n / (2.0 * counts[y])


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def _log1pexp(z):
    return np.logaddexp(0.0, z)


@dataclass
class LogRegModel:
    weights: np.ndarray
    bias: float
    l2: float
    class_weights: tuple[float, float]
    loss_history: list[float] = field(default_factory=list)
    converged: bool = True

    def decision(self, X) -> np.ndarray:
        return np.atleast_2d(X) @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.decision(X))


def logreg_loss(w, b, X, y, sample_weight, l2: float) -> float:
    z = X @ w + b
    return float(np.sum(sample_weight * (_log1pexp(z) - y * z)) + 0.5 * l2 * (w @ w))


def logreg_grad(w, b, X, y, sample_weight, l2: float) -> np.ndarray:
    """Gradient with respect to ``[w, b]``."""
    r = sample_weight * (_sigmoid(X @ w + b) - y)
    return np.concatenate([X.T @ r + l2 * w, [r.sum()]])


def train_logreg(X, y, l2: float = 1.0, class_weight: bool = True, seed: int = 0,
                 tol: float = 1e-6, max_iter: int = 5000) -> LogRegModel:
    """Minimise class-weighted, L2-penalised log loss (bias unpenalised).

    ``seed`` is accepted for interface symmetry; Newton iterations from the
    zero vector involve no randomness.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(np.unique(y)) < 2:
        raise TrainingError("logistic regression needs both classes in training data")
    sw = balanced_weights(y) if class_weight else np.ones(len(y))
    cw = (float(sw[y == 0][0]), float(sw[y == 1][0]))
    n, d = X.shape
    A = np.hstack([X, np.ones((n, 1))])
    reg = np.full(d + 1, l2)
    reg[-1] = 0.0
    theta = np.zeros(d + 1)

    def loss(t):
        return logreg_loss(t[:-1], t[-1], X, y, sw, l2)

    history = [loss(theta)]
    converged = False
    for _ in range(max_iter):
        p = _sigmoid(A @ theta)
        g = A.T @ (sw * (p - y)) + reg * theta
        if np.max(np.abs(g)) < tol:
            converged = True
            break
        h = (A * (sw * p * (1 - p))[:, None]).T @ A + np.diag(reg)
        try:
            step = np.linalg.solve(h + 1e-12 * np.eye(d + 1), g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(h, g, rcond=None)[0]
        t = 1.0
        current = history[-1]
        slope = g @ step
        while t > 1e-12:
            cand = theta - t * step
            new = loss(cand)
            if new <= current - 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            cand, new = theta, current
        if new > current:
            cand, new = theta, current
        theta = cand
        history.append(new)
        if t <= 1e-12:
            # no further decrease representable
            converged = bool(np.max(np.abs(g)) < 1e3 * tol)
            break
    return LogRegModel(theta[:-1].copy(), float(theta[-1]), l2, cw, history, converged)


# -- support vector machine ----------------------------------------------------

def kernel_matrix(A, B, kernel: str, gamma: float) -> np.ndarray:
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    if kernel == "linear":
        return A @ B.T
    if kernel == "rbf":
        sq = (np.sum(A ** 2, axis=1)[:, None] + np.sum(B ** 2, axis=1)[None, :] - 2 * A @ B.T)
        return np.exp(-gamma * np.maximum(sq, 0.0))
    raise ValueError(f"unknown kernel {kernel!r}")


@dataclass
class SvmModel:
    kernel: str
    gamma: float
    C: float
    dual_coef: np.ndarray  # alpha_i * y_i for retained points
    support: np.ndarray
    bias: float
    alpha: np.ndarray
    upper: np.ndarray
    objective: float
    iterations: int

    def decision(self, X) -> np.ndarray:
        K = kernel_matrix(np.atleast_2d(X), self.support, self.kernel, self.gamma)
        return K @ self.dual_coef + self.bias

    def predict_proba(self, X) -> np.ndarray:
        """Logistic squashing of the decision value, so 0.5 is the margin."""
        return _sigmoid(self.decision(X))


def dual_objective(alpha, Q) -> float:
    return float(0.5 * alpha @ Q @ alpha - alpha.sum())


def train_svm(X, y, kernel: str = "rbf", C: float = 1.0, gamma: Optional[float] = None,
              class_weight: bool = True, seed: int = 0, tol: float = 1e-4,
              max_iter: int = 200_000) -> SvmModel:
    """Soft-margin SVM via SMO.

    Labels are {0, 1}. ``gamma`` defaults to ``1 / (n_features * X.var())``.
    Per-sample box bounds are ``C`` times the balanced class weight.
    """
    X = np.asarray(X, dtype=float)
    y01 = np.asarray(y).astype(int)
    if len(np.unique(y01)) < 2:
        raise TrainingError("SVM needs both classes in training data")
    ys = np.where(y01 == 1, 1.0, -1.0)
    if gamma is None:
        var = X.var()
        gamma = 1.0 / (X.shape[1] * var) if var > 0 else 1.0
    upper = C * (balanced_weights(y01) if class_weight else np.ones(len(ys)))
    K = kernel_matrix(X, X, kernel, gamma)
    Q = ys[:, None] * ys[None, :] * K
    QD = np.diag(Q).copy()
    n = len(ys)
    alpha = np.zeros(n)
    G = -np.ones(n)
    tau = 1e-12
    it = 0
    pos = ys > 0
    for it in range(max_iter):
        at_upper = alpha >= upper
        at_lower = alpha <= 0
        # i: maximal violator in I_up
        up = np.where(pos, ~at_upper, ~at_lower)
        if not up.any():
            break
        score_up = np.where(up, -ys * G, -np.inf)
        i = int(np.argmax(score_up))
        gmax = score_up[i]
        low = np.where(pos, ~at_lower, ~at_upper)
        score_low = np.where(low, ys * G, -np.inf)  # equals -(-y G)
        gmax2 = score_low.max()
        if gmax + gmax2 < tol:
            break
        grad_diff = gmax + ys * G
        quad = K[i, i] + np.diag(K) - 2.0 * K[i]
        quad = np.where(quad > 0, quad, tau)
        cand = low & (grad_diff > 0)
        if not cand.any():
            break
        obj = np.where(cand, -(grad_diff ** 2) / quad, np.inf)
        j = int(np.argmin(obj))

        ai, aj = alpha[i], alpha[j]
        Ci, Cj = upper[i], upper[j]
        if ys[i] != ys[j]:
            qc = QD[i] + QD[j] + 2 * Q[i, j]
            qc = qc if qc > 0 else tau
            delta = (-G[i] - G[j]) / qc
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > Ci - Cj:
                if ni > Ci:
                    ni, nj = Ci, Ci - diff
            elif nj > Cj:
                nj, ni = Cj, Cj + diff
        else:
            qc = QD[i] + QD[j] - 2 * Q[i, j]
            qc = qc if qc > 0 else tau
            delta = (G[i] - G[j]) / qc
            total = ai + aj
            ni, nj = ai - delta, aj + delta
            if total > Ci:
                if ni > Ci:
                    ni, nj = Ci, total - Ci
            elif nj < 0:
                nj, ni = 0.0, total
            if total > Cj:
                if nj > Cj:
                    nj, ni = Cj, total - Cj
            elif ni < 0:
                ni, nj = 0.0, total
        G += Q[:, i] * (ni - ai) + Q[:, j] * (nj - aj)
        alpha[i], alpha[j] = ni, nj

    # bias from free vectors, else midpoint of the feasible interval
    yG = ys * G
    at_upper = alpha >= upper
    at_lower = alpha <= 0
    free = ~at_upper & ~at_lower
    if free.any():
        rho = yG[free].mean()
    else:
        ub_mask = (at_upper & ~pos) | (at_lower & pos)
        lb_mask = (at_upper & pos) | (at_lower & ~pos)
        ub = yG[ub_mask].min() if ub_mask.any() else np.inf
        lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
        rho = (ub + lb) / 2 if np.isfinite(ub) and np.isfinite(lb) else (
            ub if np.isfinite(ub) else lb)
    sv = alpha > 0
    return SvmModel(kernel, float(gamma), C, (alpha * ys)[sv], X[sv].copy(), float(-rho),
                    alpha, upper, dual_objective(alpha, Q), it)


# -- model configuration -------------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    kind: str = "logreg"
    l2: float = 1.0
    C: float = 1.0
    kernel: str = "rbf"
    gamma: Optional[float] = None
    class_weight: bool = True
    indicators: bool = False
    tol: float = 1e-6
    max_iter: int = 5000

    def __post_init__(self):
        if self.kind not in ("logreg", "svm"):
            raise ValueError(f"unknown model kind {self.kind!r}")


@dataclass
class FittedModel:
    """A normalizer and classifier trained together on one training set."""

    normalizer: Normalizer
    model: object
    train_index: np.ndarray

    def predict_proba(self, X) -> np.ndarray:
        return self.model.predict_proba(self.normalizer.transform(X))

    def decision(self, X) -> np.ndarray:
        return self.model.decision(self.normalizer.transform(X))


def fit_model(config: ModelConfig, X, y, seed: int = 0, train_index=None) -> FittedModel:
    X = np.asarray(X, dtype=float)
    norm = Normalizer.fit(X, config.indicators)
    Z = norm.transform(X)
    if config.kind == "logreg":
        model = train_logreg(Z, y, l2=config.l2, class_weight=config.class_weight, seed=seed,
                             tol=config.tol, max_iter=config.max_iter)
    else:
        model = train_svm(Z, y, kernel=config.kernel, C=config.C, gamma=config.gamma,
                          class_weight=config.class_weight, seed=seed)
    idx = np.arange(len(X)) if train_index is None else np.asarray(train_index)
    return FittedModel(norm, model, idx)
