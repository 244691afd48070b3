"""Linear classifiers producing continuous decision scores.

LDA (optionally with Ledoit-Wolf shrinkage of the pooled covariance) and a
hinge-loss linear SVM with an unregularized bias.  The SVM dual is solved
by two-variable decomposition in :mod:`mibench.kernels`; the bias is then
chosen by exact minimization of the primal for the resulting weights.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NonConvergence, SingleClass, SingularCovariance
from .evaluate import roc_auc, stratified_kfold

DEFAULT_C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)
INNER_FOLDS = 3
GAP_RTOL = 1e-6
# SMO's own stopping tolerance on the maximal KKT violation pair
KKT_EPS = 1e-12


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    bias: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if not (np.all(np.isfinite(w)) and math.isfinite(self.bias)):
            raise ValueError("model has non-finite entries")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))


def decision_scores(model: LinearModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.weights.size:
        raise ValueError("feature dimension does not match the model")
    return X @ model.weights + model.bias


def _check_binary(y):
    y = np.asarray(y)
    if not (np.any(y == 0) and np.any(y == 1)):
        raise SingleClass("both classes are required")
    return y


# ---------------------------------------------------------------------------
# LDA

def ledoit_wolf_shrinkage(X) -> float:
    """Ledoit-Wolf coefficient for already-centered observations ``X`` (n x d).

    Shrinks the 1/n sample covariance toward mu*I with mu = tr(S)/d.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    S = X.T @ X / n
    mu = np.trace(S) / d
    delta = np.sum((S - mu * np.eye(d)) ** 2) / d
    if delta == 0:
        return 0.0
    sq_norms = np.sum(X**2, axis=1)
    # sum_k ||x_k x_k^T - S||_F^2 = sum_k ||x_k||^4 - n ||S||_F^2
    beta = (np.sum(sq_norms**2) - n * np.sum(S**2)) / (d * n**2)
    return float(min(max(beta, 0.0), delta) / delta)


def lda_fit(X, y, shrinkage: str | None = None) -> LinearModel:
    X = np.asarray(X, dtype=np.float64)
    y = _check_binary(y)
    n, d = X.shape
    mu0, mu1 = X[y == 0].mean(axis=0), X[y == 1].mean(axis=0)
    centered = np.where((y == 0)[:, None], X - mu0, X - mu1)
    sigma = centered.T @ centered / (n - 2) if n > 2 else centered.T @ centered
    if shrinkage == "ledoit_wolf":
        rho = ledoit_wolf_shrinkage(centered)
        sigma = (1 - rho) * sigma + rho * np.trace(sigma) / d * np.eye(d)
    elif shrinkage is not None:
        raise ValueError(f"unknown shrinkage {shrinkage!r}")
    elif n <= d:
        raise SingularCovariance(f"{n} trials for {d} features; use shrinkage")
    try:
        L = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise SingularCovariance("pooled covariance is not invertible") from None
    w = np.linalg.solve(L.T, np.linalg.solve(L, mu1 - mu0))
    return LinearModel(w, -w @ (mu0 + mu1) / 2)


# ---------------------------------------------------------------------------
# SVM

@dataclass
class SvmSolution:
    model: LinearModel
    alpha: np.ndarray
    primal: float
    dual: float
    n_iter: int
    history: list = field(default_factory=list)

    @property
    def gap(self) -> float:
        return self.primal - self.dual


def hinge_sum(s, y_pm, b):
    return np.maximum(0.0, 1.0 - y_pm * (s + b)).sum()


def optimal_bias(s, y_pm) -> float:
    """Bias minimizing sum(max(0, 1 - y (s + b))) for fixed scores ``s``.

    The loss is convex piecewise linear with kinks at y - s; its minimum is
    attained on an interval between kinks, of which the midpoint is returned.
    """
    kinks = np.unique(y_pm - s)
    loss = np.maximum(0.0, 1.0 - y_pm[None, :] * (s[None, :] + kinks[:, None])).sum(axis=1)
    best = loss.min()
    on_min = kinks[loss <= best + 1e-12 * max(1.0, best)]
    return float((on_min[0] + on_min[-1]) / 2)


REFINE_DELTAS = (1e-2, 1e-3, 1e-4)


def _primal(X, y_pm, c, w):
    s = X @ w
    b = optimal_bias(s, y_pm)
    return 0.5 * w @ w + c * hinge_sum(s, y_pm, b), b


def refine_primal(X, y_pm, c, w, b, delta):
    """Re-solve the primal with the hinge pattern of (w, b) held fixed.

    Points with margin below 1 - delta keep a linear hinge term, points
    within delta of the margin are pinned to it, and the resulting
    equality-constrained QP in (w, b) is solved in the least-squares sense.
    Returns the new weights.
    """
    d = X.shape[1]
    m = y_pm * (X @ w + b)
    err = m < 1 - delta
    on = np.abs(m - 1) <= delta
    Z = X * y_pm[:, None]
    ZM = Z[on]
    k = ZM.shape[0]
    A = np.zeros((d + 1 + k, d + 1 + k))
    r = np.zeros(d + 1 + k)
    A[:d, :d] = np.eye(d)
    A[:d, d + 1:] = -ZM.T
    r[:d] = c * Z[err].sum(axis=0)
    A[d, d + 1:] = y_pm[on]
    r[d] = -c * y_pm[err].sum()
    A[d + 1:, :d] = ZM
    A[d + 1:, d] = y_pm[on]
    r[d + 1:] = 1.0
    return np.linalg.lstsq(A, r, rcond=None)[0][:d]


def svm_solve(X, y, c: float, max_iter: int = 10_000_000) -> SvmSolution:
    """Solve min 1/2||w||^2 + c * sum hinge(1 - y(w.x + b)) to relative gap 1e-6.

    SMO on the dual runs in chunks of growing length.  After each chunk the
    primal is evaluated at w(alpha) and at a few active-set refinements of
    it (each with its exact optimal bias); the lowest primal value seen so
    far is an upper bound and the SMO dual value a lower bound on the
    optimum, and the solver stops once they agree within ``GAP_RTOL``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = _check_binary(y)
    if not c > 0:
        raise ValueError("c must be positive")
    y_pm = np.where(y == 1, 1.0, -1.0)
    Q = np.ascontiguousarray((y_pm[:, None] * y_pm[None, :]) * (X @ X.T))
    n = y.size
    alpha = np.zeros(n)
    G = -np.ones(n)
    chunk = max(1000, 10 * n)
    total_iter = 0
    best = (np.inf, None, None)
    history = []
    while True:
        it, converged = kernels.smo_solve(
            Q, y_pm, float(c), alpha, G, KKT_EPS, min(chunk, max_iter - total_iter))
        total_iter += it
        w = X.T @ (alpha * y_pm)
        primal, b = _primal(X, y_pm, c, w)
        candidates = [(primal, w, b)]
        for delta in REFINE_DELTAS:
            w2 = refine_primal(X, y_pm, c, w, b, delta)
            if np.all(np.isfinite(w2)):
                p2, b2 = _primal(X, y_pm, c, w2)
                candidates.append((p2, w2, b2))
        for cand in candidates:
            if cand[0] < best[0]:
                best = cand
        dual = alpha.sum() - 0.5 * alpha @ Q @ alpha
        history.append((total_iter, best[0], dual))
        if best[0] - dual <= GAP_RTOL * max(1.0, abs(best[0])):
            return SvmSolution(LinearModel(best[1], best[2]), alpha.copy(), best[0], dual, total_iter, history)
        if converged or total_iter >= max_iter:
            raise NonConvergence(
                f"SVM stopped with duality gap {best[0] - dual:.3g} after {total_iter} iterations"
            )
        chunk = min(2 * chunk, 500_000)


def svm_fit(X, y, c: float) -> LinearModel:
    return svm_solve(X, y, c).model


@dataclass(frozen=True)
class GridSearchSpec:
    c_grid: tuple = DEFAULT_C_GRID
    inner_folds: int = INNER_FOLDS

    def __post_init__(self):
        grid = tuple(float(c) for c in self.c_grid)
        if not grid or any(c <= 0 for c in grid) or list(grid) != sorted(grid):
            raise ValueError("c_grid must be non-empty, positive and ascending")
        if self.inner_folds < 2:
            raise ValueError("inner_folds must be >= 2")
        object.__setattr__(self, "c_grid", grid)


def grid_search_svm(X, y, spec: GridSearchSpec = GridSearchSpec(), seed: int = 0):
    """Pick c by inner stratified k-fold AUC on (X, y) only, then refit.

    Returns (model, chosen c, mean inner AUC per c).  Ties go to the smaller c.
    """
    X = np.asarray(X, dtype=np.float64)
    y = _check_binary(y)
    folds = stratified_kfold(y, spec.inner_folds, seed)
    means = []
    for c in spec.c_grid:
        aucs = [roc_auc(decision_scores(svm_fit(X[tr], y[tr], c), X[te]), y[te]) for tr, te in folds]
        means.append(float(np.mean(aucs)))
    best = int(np.argmax(means))  # first maximum = smallest c
    c = spec.c_grid[best]
    return svm_fit(X, y, c), c, dict(zip(spec.c_grid, means))
