"""Declarative pipelines: a feature stage followed by a linear classifier.

A spec names its bands (or inherits the paradigm's), a feature stage and a
classifier stage.  ``fit`` sees only training trials; every data-dependent
choice (filters, tangent point, selected features, shrinkage, c, alpha)
is made there.

Inputs are arrays shaped (n_bands, n_trials, n_channels, n_samples).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .. import classify, spatial
from ..errors import InvalidSpec
from ..evaluate import hash64, roc_auc, stratified_kfold
from ..preprocess import as_band

SHIPPED_DIR = Path(__file__).parent

FEATURES = {
    "csp": {"n_filters": 6, "estimator": "scm"},
    "trcsp": {"n_filters": 6, "estimator": "scm", "alpha": [0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1]},
    "fbcsp": {"n_filters": 4, "estimator": "oas", "k_select": 10},
    "tangent": {"estimator": "oas"},
    "logvar": {},
}
CLASSIFIERS = {
    "lda": {},
    "shlda": {},
    "svm_grid": {"c_grid": list(classify.DEFAULT_C_GRID), "inner_folds": classify.INNER_FOLDS},
}
HYPER_INNER_FOLDS = 3


def _scm(X):
    return spatial.covariances(X, spatial.SCM)


def _logvar_from_scm(W, covs):
    """Log variance of W-filtered trials, read off the trial SCMs."""
    var = np.einsum("ij,njk,ik->ni", W, covs, W)
    if np.any(var <= 0):
        raise spatial.ZeroVariance("zero variance in a spatially filtered signal")
    return np.log(var)


# ---------------------------------------------------------------------------
# feature stages: fit(X, y, seed) -> callable mapping X to features

class _Csp:
    def __init__(self, n_filters, estimator, alpha=0.0):
        self.n_filters, self.estimator, self.alpha = int(n_filters), estimator, alpha

    def fit_covs(self, est_covs, y, alpha):
        C0, C1 = est_covs[y == 0].mean(axis=0), est_covs[y == 1].mean(axis=0)
        return spatial.csp_from_covariances(C0, C1, self.n_filters, alpha, per_class=alpha is not None)

    def __call__(self, X, y, seed, classifier):
        X = X[0]
        est = spatial.covariances(X, self.estimator)
        scm = est if self.estimator == spatial.SCM else _scm(X)
        alpha = self._select_alpha(est, scm, y, seed, classifier)
        W = self.fit_covs(est, y, alpha).filters
        return lambda Xt: _logvar_from_scm(W, _scm(Xt[0])), alpha

    def _select_alpha(self, est, scm, y, seed, classifier):
        if self.alpha is None:
            return None
        grid = self.alpha if isinstance(self.alpha, (list, tuple)) else [self.alpha]
        if len(grid) == 1:
            return float(grid[0])
        folds = stratified_kfold(y, HYPER_INNER_FOLDS, hash64(seed, "alpha") >> 1)
        means = []
        for a in grid:
            aucs = []
            for tr, te in folds:
                W = self.fit_covs(est[tr], y[tr], float(a)).filters
                model = classifier.fit(_logvar_from_scm(W, scm[tr]), y[tr], seed)
                aucs.append(roc_auc(classify.decision_scores(model, _logvar_from_scm(W, scm[te])), y[te]))
            means.append(np.mean(aucs))
        return float(grid[int(np.argmax(means))])


class _FilterBankCsp:
    def __init__(self, n_filters, estimator, k_select):
        self.n_filters, self.estimator, self.k = int(n_filters), estimator, int(k_select)

    def __call__(self, X, y, seed, classifier):
        filters, feats = [], []
        for Xb in X:
            C0, C1 = spatial.class_covariances(Xb, y, self.estimator)
            W = spatial.csp_from_covariances(C0, C1, self.n_filters).filters
            filters.append(W)
            feats.append(_logvar_from_scm(W, _scm(Xb)))
        keep = spatial.mi_select(np.hstack(feats), y, self.k)

        def transform(Xt):
            return np.hstack([_logvar_from_scm(W, _scm(Xb)) for W, Xb in zip(filters, Xt)])[:, keep]
        return transform, keep.tolist()


class _Tangent:
    def __init__(self, estimator):
        self.estimator = estimator

    def __call__(self, X, y, seed, classifier):
        covs = spatial.covariances(X[0], self.estimator)
        model = spatial.TangentSpaceModel.at(spatial.riemannian_mean(covs))
        return lambda Xt: spatial.tangent_project(spatial.covariances(Xt[0], self.estimator), model), None


class _LogVar:
    def __call__(self, X, y, seed, classifier):
        return lambda Xt: spatial.logvar_features(Xt[0]), None


# ---------------------------------------------------------------------------
# classifier stages: fit(F, y, seed) -> LinearModel

@dataclass(frozen=True)
class _Lda:
    shrinkage: str | None = None

    def fit(self, F, y, seed):
        return classify.lda_fit(F, y, self.shrinkage)


@dataclass(frozen=True)
class _SvmGrid:
    spec: classify.GridSearchSpec

    def fit(self, F, y, seed):
        model, _, _ = classify.grid_search_svm(F, y, self.spec, hash64(seed, "svm") >> 1)
        return model


def _merge(defaults, params, what):
    unknown = set(params) - set(defaults)
    if unknown:
        raise InvalidSpec(f"unknown {what} parameters {sorted(unknown)}")
    return {**defaults, **params}


def _split_kind(stage, table, what):
    if not isinstance(stage, dict) or "kind" not in stage:
        raise InvalidSpec(f"{what} must be a mapping with a 'kind'")
    kind = stage["kind"]
    if kind not in table:
        raise InvalidSpec(f"unknown {what} kind {kind!r}; expected one of {sorted(table)}")
    return kind, _merge(table[kind], {k: v for k, v in stage.items() if k != "kind"}, what)


@dataclass(frozen=True)
class FittedPipeline:
    transform: object
    model: classify.LinearModel
    chosen: object = None

    def decision_function(self, X) -> np.ndarray:
        return classify.decision_scores(self.model, self.transform(np.asarray(X, dtype=np.float64)))


@dataclass(frozen=True)
class PipelineSpec:
    name: str
    feature: dict
    classifier: dict
    bands: tuple | None = None
    seed: int = 0
    _stages: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise InvalidSpec("pipeline needs a non-empty name")
        fkind, fparams = _split_kind(self.feature, FEATURES, "feature")
        ckind, cparams = _split_kind(self.classifier, CLASSIFIERS, "classifier")
        if self.bands is not None:
            bands = tuple(as_band(b) for b in self.bands)
            if not bands:
                raise InvalidSpec(f"{self.name}: empty band list")
            object.__setattr__(self, "bands", bands)
            if len(bands) > 1 and fkind != "fbcsp":
                raise InvalidSpec(f"{self.name}: several bands need the fbcsp feature stage")
        try:
            feature = {
                "csp": lambda p: _Csp(p["n_filters"], p["estimator"], None),
                "trcsp": lambda p: _Csp(p["n_filters"], p["estimator"], p["alpha"]),
                "fbcsp": lambda p: _FilterBankCsp(p["n_filters"], p["estimator"], p["k_select"]),
                "tangent": lambda p: _Tangent(p["estimator"]),
                "logvar": lambda p: _LogVar(),
            }[fkind](fparams)
            if fparams.get("estimator", spatial.SCM) not in spatial.ESTIMATORS:
                raise InvalidSpec(f"{self.name}: unknown estimator {fparams['estimator']!r}")
            if fkind == "trcsp" and int(fparams["n_filters"]) % 2:
                raise InvalidSpec(f"{self.name}: trcsp needs an even filter count")
            classifier = {
                "lda": lambda p: _Lda(None),
                "shlda": lambda p: _Lda("ledoit_wolf"),
                "svm_grid": lambda p: _SvmGrid(classify.GridSearchSpec(tuple(p["c_grid"]), int(p["inner_folds"]))),
            }[ckind](cparams)
        except (TypeError, ValueError) as exc:
            raise InvalidSpec(f"{self.name}: {exc}") from None
        object.__setattr__(self, "feature", {"kind": fkind, **fparams})
        object.__setattr__(self, "classifier", {"kind": ckind, **cparams})
        object.__setattr__(self, "_stages", (feature, classifier))

    @property
    def view(self):
        return self.bands

    def resolve(self, paradigm_bands) -> "PipelineSpec":
        """Fill in inherited bands."""
        if self.bands is not None:
            return self
        return replace(self, bands=tuple(paradigm_bands), _stages=None)

    def with_seed(self, seed: int) -> "PipelineSpec":
        return replace(self, seed=int(seed), _stages=None)

    def fit(self, X, y) -> FittedPipeline:
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if X.ndim == 3:
            X = X[None]
        feature, classifier = self._stages
        transform, chosen = feature(X, y, self.seed, classifier)
        model = classifier.fit(transform(X), y, self.seed)
        return FittedPipeline(transform, model, chosen)

    def to_dict(self) -> dict:
        d = {"name": self.name, "feature": dict(self.feature), "classifier": dict(self.classifier)}
        if self.bands is not None:
            d["bands"] = [b.as_list() for b in self.bands]
        return d


def load_pipeline(path) -> PipelineSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise InvalidSpec(f"{path}: {exc}") from None
    if not isinstance(raw, dict):
        raise InvalidSpec(f"{path}: expected a mapping")
    unknown = set(raw) - {"name", "bands", "feature", "classifier"}
    if unknown:
        raise InvalidSpec(f"{path}: unknown keys {sorted(unknown)}")
    bands = raw.get("bands")
    if bands == "inherit":
        bands = None
    return PipelineSpec(raw.get("name"), raw.get("feature"), raw.get("classifier"), bands)


def load_pipelines(path=SHIPPED_DIR) -> list[PipelineSpec]:
    """Load one spec file or every ``*.yaml`` in a directory (sorted by file name)."""
    path = Path(path)
    files = sorted(path.glob("*.yaml")) if path.is_dir() else [path]
    if not files:
        raise InvalidSpec(f"no pipeline specs in {path}")
    specs = [load_pipeline(f) for f in files]
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise InvalidSpec(f"duplicate pipeline names in {path}")
    return specs
