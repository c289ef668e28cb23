from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heartvec.errors import DimensionError, InvalidConfigError, InvalidInputError
from heartvec.gmm import Gmm
from heartvec.ivector import (
    BaumWelchStats,
    TotalVariabilityModel,
    accumulate_stats,
    extract_ivector,
    posterior_wi,
    train_tv,
    update_T,
)


def random_ubm(rng, C=3, D=2):
    w = rng.random(C) + 0.1
    return Gmm(w / w.sum(), rng.normal(size=(C, D)), rng.random((C, D)) + 0.3)


def scalar_model(T, var=1.0, mean=0.0):
    return TotalVariabilityModel(np.array([[T]]), np.array([mean]), np.array([var]), 1, 1)


def naive_stats(ubm, X):
    C = ubm.n_components
    N = np.zeros(C)
    F = np.zeros_like(ubm.means)
    for x in X:
        dens = []
        for c in range(C):
            v = ubm.variances[c]
            dens.append(ubm.weights[c] * np.prod(np.exp(-((x - ubm.means[c]) ** 2) / (2 * v)) / np.sqrt(2 * np.pi * v)))
        dens = np.array(dens)
        gamma = dens / dens.sum()
        for c in range(C):
            N[c] += gamma[c]
            F[c] += gamma[c] * (x - ubm.means[c])
    return N, F


def synthetic_tv_problem(rng, C=4, D=2, R=2, n_records=200, frames=60):
    """Statistics drawn from a known T*; returns (ubm, stats, true w, T*)."""
    ubm = Gmm(np.full(C, 1.0 / C), rng.normal(size=(C, D)), np.ones((C, D)))
    T_true = rng.normal(size=(C * D, R))
    W = rng.normal(size=(n_records, R))
    stats = []
    for w in W:
        N = rng.multinomial(frames, np.full(C, 1.0 / C)).astype(float)
        shift = (T_true @ w).reshape(C, D)
        # sum of N_c unit-variance frames around m_c + T_c w, centred on m_c
        F = N[:, None] * shift + np.sqrt(N)[:, None] * rng.normal(size=(C, D))
        stats.append(BaumWelchStats(N, F))
    return ubm, stats, W, T_true


def aligned_cosines(est, true):
    """Per-dimension |cosine| after the best orthogonal alignment of est onto true."""
    U, _, Vt = np.linalg.svd(est.T @ true)
    aligned = est @ (U @ Vt)
    num = np.sum(aligned * true, axis=0)
    return np.abs(num) / (np.linalg.norm(aligned, axis=0) * np.linalg.norm(true, axis=0))


class TestStats:
    def test_single_component(self, rng):
        ubm = Gmm(np.array([1.0]), np.array([[0.5, -1.0]]), np.ones((1, 2)))
        X = rng.normal(size=(3, 2))
        s = accumulate_stats(ubm, X)
        assert s.N.tolist() == [3.0]
        np.testing.assert_allclose(s.F[0], (X - ubm.means[0]).sum(axis=0), atol=1e-12)

    def test_matches_naive(self, rng):
        for _ in range(10):
            ubm = random_ubm(rng, C=2, D=3)
            X = rng.normal(size=(5, 3))
            N, F = naive_stats(ubm, X)
            s = accumulate_stats(ubm, X)
            np.testing.assert_allclose(s.N, N, atol=1e-10)
            np.testing.assert_allclose(s.F, F, atol=1e-10)

    @given(st.integers(0, 10_000), st.integers(1, 40))
    def test_occupancy_sums_to_frames(self, seed, T):
        rng = np.random.default_rng(seed)
        ubm = random_ubm(rng, C=4, D=3)
        s = accumulate_stats(ubm, rng.normal(scale=3, size=(T, 3)))
        assert np.all(s.N >= 0)
        assert abs(s.N.sum() - T) <= 1e-8

    def test_dimension_mismatch(self, rng):
        with pytest.raises(DimensionError):
            accumulate_stats(random_ubm(rng, D=2), np.zeros((4, 3)))


class TestPosterior:
    def test_zero_stats(self, rng):
        m = TotalVariabilityModel(rng.normal(size=(6, 3)), np.zeros(6), np.ones(6), 3, 2)
        p = posterior_wi(m, BaumWelchStats(np.zeros(3), np.zeros((3, 2))))
        np.testing.assert_allclose(p.covariance, np.eye(3), atol=1e-15)
        np.testing.assert_array_equal(p.mean, np.zeros(3))

    def test_scalar_hand_case(self):
        p = posterior_wi(scalar_model(2.0), BaumWelchStats([3.0], [[6.0]]))
        assert p.covariance[0, 0] == pytest.approx(1 / 13, abs=1e-12)
        assert p.mean[0] == pytest.approx(12 / 13, abs=1e-12)
        assert p.second_moment[0, 0] == pytest.approx(157 / 169, abs=1e-12)

    def test_scalar_random_draws(self):
        rng = np.random.default_rng(99)
        for _ in range(100):
            T, var, N, F = rng.normal(), rng.uniform(0.1, 3), rng.uniform(0, 50), rng.normal(scale=10)
            p = posterior_wi(scalar_model(T, var), BaumWelchStats([N], [[F]]))
            cov = 1.0 / (1.0 + N * T * T / var)
            assert abs(p.covariance[0, 0] - cov) <= 1e-10
            assert abs(p.mean[0] - cov * T * F / var) <= 1e-10

    def test_moment_identity_and_spd(self, rng):
        for _ in range(20):
            C, D, R = 3, 4, 5
            m = TotalVariabilityModel(rng.normal(size=(C * D, R)), rng.normal(size=C * D), rng.random(C * D) + 0.1, C, D)
            p = posterior_wi(m, BaumWelchStats(rng.random(C) * 30, rng.normal(size=(C, D)) * 5))
            assert np.max(np.abs(p.covariance - p.covariance.T)) <= 1e-10
            assert np.all(np.linalg.eigvalsh(p.covariance) > 0)
            np.testing.assert_allclose(p.second_moment - np.outer(p.mean, p.mean), p.covariance, atol=1e-10)

    def test_matches_dense_formula(self, rng):
        C, D, R = 3, 2, 2
        T = rng.normal(size=(C * D, R))
        var = rng.random(C * D) + 0.2
        m = TotalVariabilityModel(T, np.zeros(C * D), var, C, D)
        N, F = rng.random(C) * 10, rng.normal(size=(C, D))
        Nsup = np.repeat(N, D)
        Sinv = np.diag(1 / var)
        L = np.eye(R) + T.T @ np.diag(Nsup) @ Sinv @ T
        expected = np.linalg.inv(L) @ T.T @ Sinv @ F.ravel()
        np.testing.assert_allclose(extract_ivector(m, BaumWelchStats(N, F)), expected, atol=1e-12)

    def test_linear_in_F(self, rng):
        m = TotalVariabilityModel(rng.normal(size=(6, 2)), np.zeros(6), np.ones(6), 3, 2)
        s = BaumWelchStats(rng.random(3) * 5, rng.normal(size=(3, 2)))
        w1 = extract_ivector(m, s)
        w2 = extract_ivector(m, BaumWelchStats(s.N, 2 * s.F))
        np.testing.assert_allclose(w2, 2 * w1, rtol=1e-13, atol=1e-15)

    def test_scalar_extract(self):
        assert extract_ivector(scalar_model(2.0), BaumWelchStats([3.0], [[6.0]]))[0] == pytest.approx(12 / 13, abs=1e-12)

    def test_negative_occupancy_rejected(self):
        with pytest.raises(InvalidInputError):
            posterior_wi(scalar_model(1.0), BaumWelchStats([-1.0], [[0.0]]))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            posterior_wi(scalar_model(1.0), BaumWelchStats([1.0, 1.0], [[0.0], [0.0]]))


class TestUpdate:
    def test_scalar_hand_case(self):
        m = scalar_model(2.0)
        s = BaumWelchStats([3.0], [[6.0]])
        T_new = update_T(m, [s], [posterior_wi(m, s)])
        assert T_new[0, 0] == pytest.approx((6 * 12 / 13) / (3 * 157 / 169), abs=1e-12)
        assert T_new[0, 0] == pytest.approx(1.9873, abs=1e-4)

    def test_matches_naive_loop(self, rng):
        C, D, R = 3, 2, 2
        m = TotalVariabilityModel(rng.normal(size=(C * D, R)), np.zeros(C * D), rng.random(C * D) + 0.5, C, D)
        stats = [BaumWelchStats(rng.random(C) * 10, rng.normal(size=(C, D))) for _ in range(7)]
        posts = [posterior_wi(m, s) for s in stats]
        T_new = update_T(m, stats, posts)
        for c in range(C):
            A = sum(s.N[c] * p.second_moment for s, p in zip(stats, posts))
            B = sum(np.outer(s.F[c], p.mean) for s, p in zip(stats, posts))
            np.testing.assert_allclose(T_new[c * D : (c + 1) * D], B @ np.linalg.inv(A), atol=1e-10)

    def test_unobserved_component_unchanged(self, rng):
        C, D, R = 3, 2, 2
        m = TotalVariabilityModel(rng.normal(size=(C * D, R)), np.zeros(C * D), np.ones(C * D), C, D)
        stats = [BaumWelchStats(np.array([4.0, 0.0, 2.0]), rng.normal(size=(C, D)) * [[1], [0], [1]]) for _ in range(3)]
        T_new = update_T(m, stats, [posterior_wi(m, s) for s in stats])
        np.testing.assert_array_equal(T_new[2:4], m.T[2:4])

    def test_duplicated_records(self, rng):
        m = TotalVariabilityModel(rng.normal(size=(4, 2)), np.zeros(4), np.ones(4), 2, 2)
        s = BaumWelchStats(np.array([3.0, 5.0]), rng.normal(size=(2, 2)))
        p = posterior_wi(m, s)
        np.testing.assert_allclose(update_T(m, [s, s], [p, p]), update_T(m, [s], [p]), atol=1e-12)

    def test_misaligned_lists(self):
        with pytest.raises(InvalidInputError):
            update_T(scalar_model(1.0), [], [])


class TestTraining:
    def test_recovers_subspace(self):
        rng = np.random.default_rng(0)
        ubm, stats, W, _ = synthetic_tv_problem(rng)
        model = train_tv(ubm, stats, rank=2, iterations=10, seed=0)
        est = np.array([extract_ivector(model, s) for s in stats])
        assert np.all(aligned_cosines(est, W) >= 0.9)
        res = np.array(model.residuals)
        assert np.all(res[1:] <= res[:-1] * (1 + 1e-6))

    def test_deterministic(self, rng):
        ubm, stats, _, _ = synthetic_tv_problem(rng, n_records=20)
        assert train_tv(ubm, stats, 2, 3, seed=4) == train_tv(ubm, stats, 2, 3, seed=4)

    def test_rank_bounds(self, rng):
        ubm, stats, _, _ = synthetic_tv_problem(rng, C=2, D=2, n_records=5)
        assert train_tv(ubm, stats, 4, 1).rank == 4
        with pytest.raises(InvalidConfigError):
            train_tv(ubm, stats, 5, 1)
        with pytest.raises(InvalidConfigError):
            train_tv(ubm, stats, 0, 1)

    def test_residual_rise_is_reported(self):
        # a single short record with rank = C*D: the residual is not an EM objective
        # and can rise; whenever it does, a warning must say so
        ubm = Gmm(np.array([0.5, 0.5]), np.array([[0.0], [3.0]]), np.ones((2, 1)))
        stats = [BaumWelchStats(np.array([2.0, 1.0]), np.array([[1.5], [-0.7]]))]
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            model = train_tv(ubm, stats, 2, 15, seed=3)
        res = np.array(model.residuals)
        rose = bool(np.any(res[1:] > res[:-1] * (1 + 1e-6)))
        assert rose == any("residual increased" in str(w.message) for w in caught)

    def test_init_scale(self, rng):
        ubm = Gmm(np.array([1.0]), np.zeros((1, 3)), np.full((1, 3), 4.0))
        model = train_tv(ubm, [BaumWelchStats([0.0], [[0.0, 0.0, 0.0]])], 2, 0, seed=0)
        expected = 0.2 * np.random.default_rng(0).standard_normal((3, 2))
        np.testing.assert_array_equal(model.T, expected)
        assert math.isfinite(model.residuals[0])


def marginal_objective(model, stats):
    """T-dependent part of the exact log-likelihood of centred statistics."""
    total = 0.0
    for s in stats:
        Nsup = np.repeat(s.N, model.feature_dim)
        TS = model.T / model.ubm_variances[:, None]
        P = np.eye(model.rank) + TS.T @ (Nsup[:, None] * model.T)
        b = TS.T @ s.F.ravel()
        total += 0.5 * b @ np.linalg.solve(P, b) - 0.5 * np.linalg.slogdet(P)[1]
    return total


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_em_never_decreases_exact_likelihood(seed):
    rng = np.random.default_rng(seed)
    ubm, stats, _, _ = synthetic_tv_problem(rng, C=3, D=2, R=2, n_records=40, frames=30)
    values = [marginal_objective(train_tv(ubm, stats, 2, it, seed=seed), stats) for it in range(8)]
    assert np.all(np.diff(values) >= -1e-9 * np.abs(values[:-1]))
