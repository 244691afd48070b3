import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import eigh
from sklearn.covariance import OAS as SkOAS

from mibench import spatial as sp
from mibench.datamodel import EpochSet, SpdMatrix
from mibench.errors import DegenerateTrial, TooFewFeatures


def random_spd(rng, p, cond=10.0):
    Q, _ = np.linalg.qr(rng.normal(size=(p, p)))
    lam = np.exp(rng.uniform(0, np.log(cond), p))
    return (Q * lam) @ Q.T


def trials_with_cov(cov_sqrt, n_trials, n_samples, rng):
    Z = rng.normal(size=(n_trials, cov_sqrt.shape[0], n_samples))
    return cov_sqrt @ Z


def diag_class_epochs():
    """Trials whose centered sample covariance is exactly diag(2,1) or diag(1,2)."""
    a = np.array([1.0, -1.0, 1.0, -1.0])
    b = np.array([1.0, 1.0, -1.0, -1.0])
    t0 = np.stack([np.sqrt(2) * a, b])
    t1 = np.stack([a, np.sqrt(2) * b])
    data = np.stack([t0, t0, t1, t1])
    return EpochSet(data, [0, 0, 1, 1], 128.0)


class TestCovariance:
    def test_scm_hand_example(self):
        X = np.array([[1, -1, 1, -1], [1, 1, -1, -1]], dtype=float)
        assert np.allclose(sp.covariance(X, "scm").values, np.eye(2), atol=1e-15)

    def test_oas_fixed_point_identity(self):
        X = np.array([[1, -1, 1, -1], [1, 1, -1, -1]], dtype=float)
        assert np.allclose(sp.covariance(X, "oas").values, np.eye(2), atol=1e-15)

    def test_oas_formula_independent(self):
        rng = np.random.default_rng(0)
        for p, n in ((3, 10), (8, 50), (5, 400)):
            X = rng.normal(size=(p, n)) * np.arange(1, p + 1)[:, None]
            Xc = X - X.mean(axis=1, keepdims=True)
            S = Xc @ Xc.T / n
            trS2 = np.sum(S * S)
            trS = np.trace(S)
            rho = ((1 - 2 / p) * trS2 + trS**2) / ((n + 1 - 2 / p) * (trS2 - trS**2 / p))
            rho = min(max(rho, 0), 1)
            ref = (1 - rho) * S + rho * trS / p * np.eye(p)
            assert np.allclose(sp.covariance(X, "oas").values, ref, rtol=1e-12, atol=1e-14)

    def test_oas_close_to_sklearn_for_many_channels(self):
        # sklearn drops the 2/p terms, which vanish as p grows
        rng = np.random.default_rng(1)
        X = rng.normal(size=(60, 100))
        ours = sp.covariance(X, "oas").values
        ref = SkOAS().fit(X.T).covariance_
        assert np.linalg.norm(ours - ref) / np.linalg.norm(ref) < 0.02

    def test_oas_shrinkage_vanishes(self):
        rng = np.random.default_rng(2)
        A = np.linalg.cholesky(random_spd(rng, 4, cond=20))
        rhos = []
        for n in (10, 100, 10000):
            X = A @ rng.normal(size=(4, n))
            S = sp._scm(X)
            rhos.append(float(sp.oas_shrinkage(S, n)))
        assert rhos[0] > rhos[1] > rhos[2]
        assert rhos[2] < 0.01

    def test_degenerate(self):
        with pytest.raises(DegenerateTrial):
            sp.covariance(np.zeros((3, 10)))

    def test_rank_deficient_scm_jittered(self):
        X = np.random.default_rng(3).normal(size=(5, 3))
        S = sp.covariance(X, "scm")
        assert np.linalg.eigvalsh(S.values)[0] > 0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 6), st.integers(2, 30), st.integers(0, 2**31))
    def test_oas_always_spd(self, p, n, seed):
        X = np.random.default_rng(seed).normal(size=(p, n))
        SpdMatrix(sp.covariance(X, "oas").values)


class TestCsp:
    def test_analytic_diagonal(self):
        bank = sp.csp_fit(diag_class_epochs(), n_filters=2)
        assert np.allclose(bank.eigenvalues, [2 / 3, 1 / 3], atol=1e-12)
        expected = np.array([[0, 1], [1, 0]]) / np.sqrt(3)
        assert np.allclose(bank.filters, expected, atol=1e-12)

    def test_equal_classes_all_half(self):
        bank = sp.csp_from_covariances(np.eye(3), np.eye(3), 3)
        assert np.allclose(bank.eigenvalues, 0.5)

    def test_matches_generalized_solver(self):
        rng = np.random.default_rng(4)
        C0, C1 = random_spd(rng, 6), random_spd(rng, 6)
        bank = sp.csp_from_covariances(C0, C1, 6)
        ref = eigh(C1, C0 + C1, eigvals_only=True)
        assert np.allclose(np.sort(bank.eigenvalues), ref, atol=1e-12)
        for w, lam in zip(bank.filters, bank.eigenvalues):
            assert np.allclose(C1 @ w, lam * (C0 + C1) @ w, atol=1e-10)

    def test_whitening_invariant(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            p = int(rng.integers(2, 9))
            C0, C1 = random_spd(rng, p, 50), random_spd(rng, p, 50)
            W = sp.csp_from_covariances(C0, C1, p).filters
            assert np.allclose(W @ (C0 + C1) @ W.T, np.eye(p), atol=1e-8)

    def test_divergence_order(self):
        rng = np.random.default_rng(6)
        bank = sp.csp_from_covariances(random_spd(rng, 8), random_spd(rng, 8), 6)
        div = np.maximum(bank.eigenvalues, 1 - bank.eigenvalues)
        assert np.all(np.diff(div) <= 1e-12)

    def test_class_swap(self):
        rng = np.random.default_rng(7)
        C0, C1 = random_spd(rng, 5), random_spd(rng, 5)
        a = sp.csp_from_covariances(C0, C1, 4)
        b = sp.csp_from_covariances(C1, C0, 4)
        assert np.allclose(np.sort(a.eigenvalues), np.sort(1 - b.eigenvalues), atol=1e-12)
        key = lambda F: sorted(map(tuple, np.round(F, 8)))
        assert key(a.filters) == key(b.filters)

    def test_scaling_invariance(self):
        rng = np.random.default_rng(8)
        X = trials_with_cov(np.diag([1, 2, 3, 1.5]), 20, 64, rng)
        y = np.repeat([0, 1], 10)
        X[y == 1, 0] *= 2
        a = sp.csp_fit(EpochSet(X, y, 128), 4)
        b = sp.csp_fit(EpochSet(7.5 * X, y, 128), 4)
        assert np.allclose(a.eigenvalues, b.eigenvalues, atol=1e-10)
        # filters rescale by 1/c; normalized directions agree up to sign
        na = a.filters / np.linalg.norm(a.filters, axis=1, keepdims=True)
        nb = b.filters / np.linalg.norm(b.filters, axis=1, keepdims=True)
        assert np.allclose(np.abs(np.sum(na * nb, axis=1)), 1, atol=1e-8)

    def test_trcsp_per_class(self):
        rng = np.random.default_rng(9)
        C0, C1 = random_spd(rng, 6), random_spd(rng, 6)
        bank = sp.csp_from_covariances(C0, C1, 6, tikhonov_alpha=0.1, per_class=True)
        assert bank.filters.shape == (6, 6)
        D = C0 + C1 + 0.1 * np.trace(C0 + C1) / 6 * np.eye(6)
        top1 = eigh(C1, D, eigvals_only=True)[::-1][:3]
        top0 = eigh(C0, D, eigvals_only=True)[::-1][:3]
        assert np.allclose(bank.eigenvalues, np.concatenate([top1, top0]), atol=1e-10)

    def test_trcsp_zero_alpha_matches_extreme_filters(self):
        rng = np.random.default_rng(10)
        C0, C1 = random_spd(rng, 5), random_spd(rng, 5)
        tr = sp.csp_from_covariances(C0, C1, 2, 0.0, per_class=True)
        lam = eigh(C1, C0 + C1, eigvals_only=True)
        assert tr.eigenvalues[0] == pytest.approx(lam[-1])
        assert tr.eigenvalues[1] == pytest.approx(1 - lam[0])


class TestFeatures:
    def test_logvar(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(3, 500))
        X = (X - X.mean(1, keepdims=True)) / X.std(1, keepdims=True)
        assert np.allclose(sp.logvar_features(X), 0, atol=1e-12)
        assert np.allclose(sp.logvar_features(np.e * X), 2, atol=1e-12)
        assert sp.logvar_features(X).shape == (3,)

    def test_csp_features_identity_and_scaling(self):
        rng = np.random.default_rng(12)
        X = rng.normal(size=(4, 200))
        eye = sp.SpatialFilterBank(np.eye(4), np.zeros(4))
        assert np.allclose(sp.csp_features(X, eye), sp.logvar_features(X))
        W = rng.normal(size=(3, 4))
        bank = sp.SpatialFilterBank(W, np.zeros(3))
        assert np.allclose(sp.csp_features(2 * X, bank) - sp.csp_features(X, bank), np.log(4))


class TestRiemann:
    def test_mean_of_repeated(self):
        A = random_spd(np.random.default_rng(13), 4)
        assert np.allclose(sp.riemannian_mean([A, A]), A, atol=1e-12)

    def test_geodesic_midpoint(self):
        a, b = np.array([1.0, 4.0, 0.5]), np.array([9.0, 1.0, 2.0])
        M = sp.riemannian_mean([np.diag(a), np.diag(b)])
        assert np.allclose(M, np.diag(np.sqrt(a * b)), atol=1e-8)

    def test_congruence(self):
        rng = np.random.default_rng(14)
        C = [random_spd(rng, 4) for _ in range(10)]
        G = rng.normal(size=(4, 4))
        lhs = sp.riemannian_mean([G @ c @ G.T for c in C])
        rhs = G @ sp.riemannian_mean(C) @ G.T
        assert np.allclose(lhs, rhs, atol=1e-6 * np.abs(rhs).max())

    def test_tangent_example(self):
        model = sp.TangentSpaceModel.at(np.eye(2))
        v = sp.tangent_project(np.diag([np.e, 1 / np.e]), model)
        assert np.allclose(v, [1, 0, -1], atol=1e-14)

    def test_tangent_zero_at_reference(self):
        M = random_spd(np.random.default_rng(15), 5)
        v = sp.tangent_project(M, sp.TangentSpaceModel.at(M))
        assert np.abs(v).max() <= 1e-12

    def test_tangent_norm_is_distance(self):
        rng = np.random.default_rng(16)
        for _ in range(20):
            M, C = random_spd(rng, 5), random_spd(rng, 5)
            v = sp.tangent_project(C, sp.TangentSpaceModel.at(M))
            lam = np.linalg.eigvals(np.linalg.solve(M, C)).real
            assert np.linalg.norm(v) == pytest.approx(np.sqrt(np.sum(np.log(lam) ** 2)), abs=1e-8)

    def test_mean_centering(self):
        rng = np.random.default_rng(17)
        C = np.array([random_spd(rng, 4) for _ in range(30)])
        model = sp.TangentSpaceModel.at(sp.riemannian_mean(C))
        assert np.linalg.norm(sp.tangent_project(C, model).mean(axis=0)) < 1e-6


class TestMutualInformation:
    def test_perfect_dependence(self):
        y = np.repeat([0, 1], 50)
        F = np.column_stack([np.random.default_rng(0).normal(size=100), y.astype(float)])
        assert sp.mutual_information(y.astype(float), y) == pytest.approx(np.log(2))
        assert sp.mi_select(F, y, 1)[0] == 1

    def test_independent_feature_small(self):
        rng = np.random.default_rng(18)
        y = rng.integers(0, 2, 1000)
        assert sp.mutual_information(rng.normal(size=1000), y) < 0.05

    def test_ties_prefer_lower_index(self):
        y = np.repeat([0, 1], 20)
        f = y.astype(float)
        F = np.column_stack([np.zeros(40) + np.arange(40) % 2, f, f, f])
        assert list(sp.mi_select(F, y, 2)) == [1, 2]

    def test_too_few(self):
        with pytest.raises(TooFewFeatures):
            sp.mi_select(np.zeros((10, 3)), np.repeat([0, 1], 5), 10)
