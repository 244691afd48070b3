"""Covariance estimation and spatial feature extraction.

Covers sample and OAS-shrunk trial covariances, common spatial patterns
(plain and Tikhonov-regularized), log-variance features, the affine-invariant
Riemannian mean with tangent-space projection, and mutual-information
feature ranking.

Batch functions take ``(n_trials, n_channels, n_samples)`` arrays; the
single-trial signatures wrap them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, eigvalsh, solve_triangular

from .datamodel import EpochSet, SpdMatrix, validate_epochset
from .errors import (
    DegenerateTrial,
    NonConvergence,
    NotSpd,
    SingularComposite,
    TooFewFeatures,
    ZeroVariance,
    SingleClass,
)

SCM = "scm"
OAS = "oas"
ESTIMATORS = (SCM, OAS)
RANK_JITTER = 1e-10
EIG_FLOOR = 1e-12
TIE_DECIMALS = 12


# ---------------------------------------------------------------------------
# covariance

def _scm(X):
    Xc = X - X.mean(axis=-1, keepdims=True)
    n = X.shape[-1]
    S = Xc @ np.swapaxes(Xc, -1, -2) / n
    return (S + np.swapaxes(S, -1, -2)) / 2


def oas_shrinkage(S, n_samples):
    """OAS coefficient for a sample covariance ``S`` built from ``n_samples``.

    rho = ((1 - 2/p) tr(S^2) + tr(S)^2) / ((n + 1 - 2/p) (tr(S^2) - tr(S)^2 / p)),
    clipped to [0, 1].  Works on stacks of matrices.
    """
    p = S.shape[-1]
    tr = np.trace(S, axis1=-2, axis2=-1)
    tr2 = np.einsum("...ij,...ji->...", S, S)
    num = (1 - 2 / p) * tr2 + tr**2
    den = (n_samples + 1 - 2 / p) * (tr2 - tr**2 / p)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(den > 0, num / np.where(den > 0, den, 1), 1.0)
    return np.clip(rho, 0.0, 1.0)


def covariances(X, estimator: str = SCM) -> np.ndarray:
    """Per-trial spatial covariance of a ``(n_trials, channels, samples)`` array."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] < 2:
        raise ValueError("covariance needs at least two samples")
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown covariance estimator {estimator!r}")
    S = _scm(X)
    p = S.shape[-1]
    tr = np.trace(S, axis1=-2, axis2=-1)
    if np.any(tr <= 0):
        raise DegenerateTrial("trial has no variance in any channel")
    mu = (tr / p)[..., None, None]
    eye = np.eye(p)
    if estimator == OAS:
        rho = oas_shrinkage(S, X.shape[-1])[..., None, None]
        S = (1 - rho) * S + rho * mu * eye
    S = (S + np.swapaxes(S, -1, -2)) / 2
    low = np.linalg.eigvalsh(S)[..., 0]
    if np.any(low <= 0):
        S = S + np.where((low <= 0)[..., None, None], RANK_JITTER * mu * eye, 0.0)
    return S


def covariance(trial, estimator: str = SCM) -> SpdMatrix:
    return SpdMatrix(covariances(np.asarray(trial)[None], estimator)[0])


# ---------------------------------------------------------------------------
# common spatial patterns

@dataclass(frozen=True)
class SpatialFilterBank:
    filters: np.ndarray  # n_filters x n_channels, one filter per row
    eigenvalues: np.ndarray


def _sign_normalize(W):
    idx = np.argmax(np.abs(W), axis=1)
    signs = np.sign(W[np.arange(W.shape[0]), idx])
    signs[signs == 0] = 1
    return W * signs[:, None]


def _whitened_eig(C, D):
    """Solve C w = lambda D w via Cholesky whitening of D.

    Returns eigenvalues ascending and the matching filters as rows, scaled so
    that W D W^T = I.
    """
    p = D.shape[0]
    try:
        L = cholesky(D, lower=True)
    except np.linalg.LinAlgError:
        D = D + RANK_JITTER * np.trace(D) / p * np.eye(p)
        try:
            L = cholesky(D, lower=True)
        except np.linalg.LinAlgError:
            raise SingularComposite("composite covariance is not positive definite") from None
    Linv = solve_triangular(L, np.eye(p), lower=True)
    A = Linv @ C @ Linv.T
    lam, U = np.linalg.eigh((A + A.T) / 2)
    return lam, U.T @ Linv


def class_covariances(X, y, estimator=SCM):
    covs = covariances(X, estimator)
    return covs[y == 0].mean(axis=0), covs[y == 1].mean(axis=0)


def csp_fit(
    epochs: EpochSet,
    n_filters: int = 6,
    estimator: str = SCM,
    tikhonov_alpha: float = 0.0,
    per_class: bool | None = None,
) -> SpatialFilterBank:
    """Fit CSP filters on a two-class EpochSet.

    With ``per_class`` false the filters solve C1 w = l (C0 + C1) w and the
    ``n_filters`` with the largest max(l, 1 - l) are kept (ties prefer the
    larger l, then the lower index).  With ``per_class`` true (the default
    whenever ``tikhonov_alpha > 0``) each class gets ``n_filters // 2``
    filters maximizing w'C_c w / w'(C0 + C1 + a I)w.  The penalty ``a`` is
    ``tikhonov_alpha`` times the mean eigenvalue of C0 + C1, keeping the
    regularization strength independent of signal units.
    """
    validate_epochset(epochs, training=True)
    X, y = epochs.data, epochs.labels
    p = X.shape[1]
    if not 1 <= n_filters <= p:
        raise ValueError(f"n_filters must be in [1, {p}], got {n_filters}")
    if tikhonov_alpha < 0:
        raise ValueError("tikhonov_alpha must be non-negative")
    if per_class is None:
        per_class = tikhonov_alpha > 0
    C0, C1 = class_covariances(X, y, estimator)
    return csp_from_covariances(C0, C1, n_filters, tikhonov_alpha, per_class)


def csp_from_covariances(C0, C1, n_filters=6, tikhonov_alpha=0.0, per_class=False):
    composite = C0 + C1
    p = composite.shape[0]
    if not 1 <= n_filters <= p:
        raise ValueError(f"n_filters must be in [1, {p}], got {n_filters}")
    if not per_class:
        lam, W = _whitened_eig(C1, composite)
        div = np.round(np.maximum(lam, 1 - lam), TIE_DECIMALS)
        order = np.lexsort((np.arange(p), -lam, -div))[:n_filters]
        return SpatialFilterBank(_sign_normalize(W[order]), lam[order])

    if n_filters % 2:
        raise ValueError("per-class CSP needs an even number of filters")
    k = n_filters // 2
    D = composite + tikhonov_alpha * np.trace(composite) / p * np.eye(p)
    rows, lams = [], []
    for C in (C1, C0):
        lam, W = _whitened_eig(C, D)
        # eigh is ascending; take the k largest, larger first
        idx = np.arange(p - 1, p - 1 - k, -1)
        rows.append(W[idx])
        lams.append(lam[idx])
    return SpatialFilterBank(_sign_normalize(np.vstack(rows)), np.concatenate(lams))


def _log_var(Z):
    var = Z.var(axis=-1)
    if np.any(var <= 0):
        raise ZeroVariance("zero variance in a spatially filtered signal")
    return np.log(var)


def csp_features(X, bank: SpatialFilterBank) -> np.ndarray:
    """Log variance of each filtered signal; accepts one trial or a batch."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-2] != bank.filters.shape[1]:
        raise ValueError("channel count does not match the filter bank")
    return _log_var(bank.filters @ X)


def logvar_features(X) -> np.ndarray:
    return _log_var(np.asarray(X, dtype=np.float64))


# ---------------------------------------------------------------------------
# Riemannian geometry

def _eig_fn(C, fn):
    C = (C + np.swapaxes(C, -1, -2)) / 2
    lam, U = np.linalg.eigh(C)
    return (U * fn(lam)[..., None, :]) @ np.swapaxes(U, -1, -2)


def _clip(lam):
    floor = EIG_FLOOR * lam.max(axis=-1, keepdims=True)
    return np.maximum(lam, floor)


def sqrtm(C):
    return _eig_fn(C, np.sqrt)


def invsqrtm(C):
    return _eig_fn(C, lambda l: 1.0 / np.sqrt(l))


def logm(C):
    return _eig_fn(C, lambda l: np.log(_clip(l)))


def expm(C):
    return _eig_fn(C, np.exp)


def riemannian_distance(A, B):
    """Affine-invariant distance: sqrt(sum log^2 eig(A^-1 B))."""
    lam = eigvalsh(B, A)
    return float(np.sqrt(np.sum(np.log(lam) ** 2)))


def riemannian_mean(mats, tol: float = 1e-8, max_iter: int = 50) -> np.ndarray:
    """Affine-invariant Frechet mean by fixed-point iteration from the arithmetic mean."""
    C = np.asarray([getattr(m, "values", m) for m in mats], dtype=np.float64)
    if C.ndim != 3 or C.shape[0] == 0:
        raise ValueError("expected a non-empty stack of square matrices")
    M = C.mean(axis=0)
    norm = np.inf
    for _ in range(max_iter):
        half, ihalf = sqrtm(M), invsqrtm(M)
        T = logm(ihalf @ C @ ihalf).mean(axis=0)
        norm = np.linalg.norm(T)
        M = half @ expm(T) @ half
        M = (M + M.T) / 2
        if norm < tol:
            break
    if norm > 1e-6:
        raise NonConvergence(f"Riemannian mean did not converge (step norm {norm:.3g})")
    return M


@dataclass(frozen=True)
class TangentSpaceModel:
    reference: np.ndarray
    whitener: np.ndarray

    @classmethod
    def at(cls, reference) -> "TangentSpaceModel":
        ref = SpdMatrix(getattr(reference, "values", reference)).values
        return cls(ref, invsqrtm(ref))


def _upper_weights(p):
    iu = np.triu_indices(p)
    w = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
    return iu, w


def tangent_project(C, model: TangentSpaceModel) -> np.ndarray:
    """Map SPD matrices to the tangent space at ``model.reference``.

    The p(p+1)/2 upper-triangular entries of log(M^-1/2 C M^-1/2) are kept,
    off-diagonals scaled by sqrt(2) so the Euclidean norm of the vector is the
    Riemannian distance to the reference.
    """
    C = np.asarray(getattr(C, "values", C), dtype=np.float64)
    p = model.reference.shape[0]
    if C.shape[-2:] != (p, p):
        raise ValueError("matrix dimension does not match the reference")
    low = np.linalg.eigvalsh((C + np.swapaxes(C, -1, -2)) / 2)[..., 0]
    if np.any(low <= 0):
        raise NotSpd("cannot project a matrix that is not positive definite")
    S = logm(model.whitener @ C @ model.whitener)
    iu, w = _upper_weights(p)
    return S[..., iu[0], iu[1]] * w


# ---------------------------------------------------------------------------
# mutual information

N_BINS = 10


def equal_frequency_bins(x, n_bins=N_BINS):
    edges = np.quantile(x, np.arange(1, n_bins) / n_bins)
    return np.searchsorted(edges, x, side="right")


def mutual_information(x, y, n_bins=N_BINS) -> float:
    """Plug-in MI in nats between a binned continuous feature and a label."""
    b = equal_frequency_bins(np.asarray(x, dtype=np.float64), n_bins)
    y = np.asarray(y)
    n = y.size
    joint = np.zeros((n_bins, 2))
    np.add.at(joint, (b, y), 1.0)
    joint /= n
    pb = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (pb @ py)[nz])))


def mi_select(features, labels, k: int = 10) -> np.ndarray:
    """Indices of the ``k`` features with highest MI; ties go to the lower index."""
    F = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if F.shape[1] < k:
        raise TooFewFeatures(f"{F.shape[1]} features, {k} requested")
    if len(np.unique(y)) < 2:
        raise SingleClass("both classes are needed to rank features")
    mi = np.array([mutual_information(F[:, j], y) for j in range(F.shape[1])])
    return np.argsort(-mi, kind="stable")[:k]
