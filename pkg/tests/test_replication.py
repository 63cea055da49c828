"""Replication-compressed inference against straight N-point computation.

The oracle here is deliberately primitive: expand every replicate, build the
full covariance, and lean on numpy's generic solve/slogdet.  The compressed
route must match it to floating-point accuracy, not approximately.
"""

import math

import numpy as np
import pytest

from gplfd.replication import (
    CompressedSystem,
    NumericalError,
    bench_replication,
    cho_factor_jittered,
    count_factorizations,
    expand_surrogate,
    expand_system,
    loglik_compressed,
    loglik_dense,
    predict_compressed,
    predict_dense,
    solve_alpha,
)

_LOG_2PI = math.log(2.0 * math.pi)


def se_gram(x, xp, lengthscale, amplitude):
    tau = np.abs(np.asarray(x)[:, None] - np.asarray(xp)[None, :])
    return amplitude * np.exp(-0.5 * (tau / lengthscale) ** 2)


def naive_loglik(C, resid):
    sign, logdet = np.linalg.slogdet(C)
    assert sign > 0
    alpha = np.linalg.solve(C, resid)
    return -0.5 * (resid @ alpha + logdet + resid.size * _LOG_2PI)


def random_instance(rng, n=None, max_count=6, het=False):
    """Raw replicated sample plus the compressed statistics built from it."""
    n = n or int(rng.integers(2, 21))
    x = np.sort(rng.uniform(0.0, 1.0, size=n))
    counts = rng.integers(1, max_count + 1, size=n)
    amplitude = float(rng.uniform(0.5, 3.0))
    lengthscale = float(rng.uniform(0.1, 1.5))
    k_n = se_gram(x, x, lengthscale, amplitude)
    k_n[np.diag_indices_from(k_n)] += 1e-8 * amplitude
    if het:
        r_n = rng.uniform(1e-4, 0.5, size=n)
    else:
        r_n = np.full(n, float(rng.uniform(1e-4, 0.5)))
    mean = np.full(n, float(rng.normal()))
    raw_idx = np.repeat(np.arange(n), counts)
    y_raw = mean[raw_idx] + rng.normal(scale=0.8, size=raw_idx.size)
    ybar = np.array([y_raw[raw_idx == i].mean() for i in range(n)])
    scatter = np.array([((y_raw[raw_idx == i] - ybar[i]) ** 2).sum() for i in range(n)])
    sys = CompressedSystem(
        k_n=k_n, r_n=r_n, counts=counts.astype(np.int64), ybar=ybar,
        scatter=scatter, mean=mean,
    )
    return sys, x, raw_idx, y_raw, (lengthscale, amplitude)


def dense_pieces(sys, raw_idx, y_raw):
    k_nn = sys.k_n[np.ix_(raw_idx, raw_idx)]
    r_nn = sys.r_n[raw_idx]
    resid = y_raw - sys.mean[raw_idx]
    return k_nn, r_nn, resid


class TestLoglikCompressed:
    def test_single_point_closed_form(self):
        y, sf2, lam = 1.3, 0.8, 0.05
        sys = CompressedSystem(
            k_n=np.array([[sf2]]),
            r_n=np.array([lam]),
            counts=np.array([1]),
            ybar=np.array([y]),
            scatter=np.array([0.0]),
            mean=np.array([0.0]),
        )
        expected = -0.5 * (y**2 / (sf2 + lam) + math.log(sf2 + lam) + _LOG_2PI)
        np.testing.assert_allclose(loglik_compressed(sys), expected, atol=1e-12)

    def test_three_locations_with_mixed_counts(self):
        rng = np.random.default_rng(0)
        x = np.array([0.1, 0.5, 0.9])
        counts = np.array([2, 1, 3])
        k_n = se_gram(x, x, 0.4, 1.2)
        k_n[np.diag_indices_from(k_n)] += 1e-8 * 1.2
        raw_idx = np.repeat(np.arange(3), counts)
        y_raw = rng.normal(size=6)
        ybar = np.array([y_raw[raw_idx == i].mean() for i in range(3)])
        scatter = np.array([((y_raw[raw_idx == i] - ybar[i]) ** 2).sum() for i in range(3)])
        sys = CompressedSystem(
            k_n=k_n, r_n=np.full(3, 0.07), counts=counts, ybar=ybar,
            scatter=scatter, mean=np.zeros(3),
        )
        C = k_n[np.ix_(raw_idx, raw_idx)] + np.diag(np.full(6, 0.07))
        np.testing.assert_allclose(
            loglik_compressed(sys), naive_loglik(C, y_raw), atol=1e-8
        )

    def test_invariant_to_location_permutation(self):
        rng = np.random.default_rng(1)
        sys, *_ = random_instance(rng, n=8)
        perm = rng.permutation(8)
        permuted = CompressedSystem(
            k_n=sys.k_n[np.ix_(perm, perm)],
            r_n=sys.r_n[perm],
            counts=sys.counts[perm],
            ybar=sys.ybar[perm],
            scatter=sys.scatter[perm],
            mean=sys.mean[perm],
        )
        np.testing.assert_allclose(
            loglik_compressed(sys), loglik_compressed(permuted), atol=1e-10
        )

    def test_quadratic_terms_scale_with_squared_outputs(self):
        rng = np.random.default_rng(2)
        sys, x, raw_idx, y_raw, _ = random_instance(rng, n=6)
        base = CompressedSystem(
            k_n=sys.k_n, r_n=sys.r_n, counts=sys.counts, ybar=sys.ybar,
            scatter=sys.scatter, mean=np.zeros(sys.n),
        )
        doubled = CompressedSystem(
            k_n=sys.k_n, r_n=sys.r_n, counts=sys.counts, ybar=2.0 * sys.ybar,
            scatter=4.0 * sys.scatter, mean=np.zeros(sys.n),
        )
        np.testing.assert_allclose(doubled.quad_full, 4.0 * base.quad_full, rtol=1e-12)
        # determinant terms identical, so the likelihood gap is pure quadratic
        factor = base.factorize()
        e = base.rhs
        quad_base = float((base.scatter / base.r_n).sum() + e @ solve_alpha(base, factor))
        gap = loglik_compressed(base, factor) - loglik_compressed(doubled, factor)
        np.testing.assert_allclose(gap, 0.5 * 3.0 * quad_base, rtol=1e-9)

    def test_all_singletons_reduce_to_dense_formula(self):
        rng = np.random.default_rng(3)
        sys, x, raw_idx, y_raw, _ = random_instance(rng, n=10, max_count=1)
        assert np.all(sys.counts == 1)
        k_nn, r_nn, resid = dense_pieces(sys, raw_idx, y_raw)
        np.testing.assert_allclose(
            loglik_compressed(sys), loglik_dense(k_nn, r_nn, resid), atol=1e-10
        )


class TestPredictCompressed:
    def _query_pieces(self, sys, x, hyper, m=15):
        lengthscale, amplitude = hyper
        xq = np.linspace(-0.2, 1.2, m)
        k_star = se_gram(x, xq, lengthscale, amplitude)
        k_ss = np.full(m, amplitude)
        r_star = np.full(m, sys.r_n.mean())
        mean_star = np.full(m, sys.mean[0])
        return xq, k_star, k_ss, r_star, mean_star

    def test_matches_naive_dense_prediction(self):
        rng = np.random.default_rng(4)
        sys, x, raw_idx, y_raw, hyper = random_instance(rng, n=12)
        xq, k_star, k_ss, r_star, mean_star = self._query_pieces(sys, x, hyper)
        mu_c, var_c = predict_compressed(sys, k_star, k_ss, r_star, mean_star)
        C = sys.k_n[np.ix_(raw_idx, raw_idx)] + np.diag(sys.r_n[raw_idx])
        resid = y_raw - sys.mean[raw_idx]
        k_star_full = k_star[raw_idx, :]
        alpha = np.linalg.solve(C, resid)
        mu_d = mean_star + k_star_full.T @ alpha
        var_d = k_ss + r_star - np.einsum("ij,ij->j", k_star_full, np.linalg.solve(C, k_star_full))
        np.testing.assert_allclose(mu_c, mu_d, atol=1e-8)
        np.testing.assert_allclose(var_c, var_d, atol=1e-8)

    def test_full_covariance_agrees_with_dense_route(self):
        rng = np.random.default_rng(5)
        sys, x, raw_idx, y_raw, hyper = random_instance(rng, n=9)
        lengthscale, amplitude = hyper
        xq = np.linspace(0.0, 1.0, 7)
        k_star = se_gram(x, xq, lengthscale, amplitude)
        k_ss = se_gram(xq, xq, lengthscale, amplitude)
        r_star = np.full(7, 1e-6)
        mean_star = np.zeros(7)
        mu_c, cov_c = predict_compressed(sys, k_star, k_ss, r_star, mean_star, full_cov=True)
        k_nn, r_nn, resid = dense_pieces(sys, raw_idx, y_raw)
        mu_d, cov_d = predict_dense(
            k_nn, r_nn, resid, k_star[raw_idx, :], k_ss, r_star,
            mean_star + sys.mean[0], full_cov=True,
        )
        np.testing.assert_allclose(mu_c + sys.mean[0] - mean_star, mu_d, atol=1e-8)
        np.testing.assert_allclose(cov_c, cov_d, atol=1e-8)

    def test_merge_invariance(self):
        """A location split into two identical entries predicts the same."""
        rng = np.random.default_rng(6)
        x = np.array([0.2, 0.6])
        k2 = se_gram(x, x, 0.5, 1.0)
        y_raw = rng.normal(size=4)
        merged = CompressedSystem(
            k_n=k2,
            r_n=np.array([0.05, 0.05]),
            counts=np.array([3, 1]),
            ybar=np.array([y_raw[:3].mean(), y_raw[3]]),
            scatter=np.array([((y_raw[:3] - y_raw[:3].mean()) ** 2).sum(), 0.0]),
            mean=np.zeros(2),
        )
        x3 = np.array([0.2, 0.2, 0.6])
        k3 = se_gram(x3, x3, 0.5, 1.0)
        split = CompressedSystem(
            k_n=k3,
            r_n=np.array([0.05, 0.05, 0.05]),
            counts=np.array([2, 1, 1]),
            ybar=np.array([y_raw[:2].mean(), y_raw[2], y_raw[3]]),
            scatter=np.array([((y_raw[:2] - y_raw[:2].mean()) ** 2).sum(), 0.0, 0.0]),
            mean=np.zeros(3),
        )
        xq = np.linspace(0.0, 1.0, 9)
        ks2 = se_gram(x, xq, 0.5, 1.0)
        ks3 = se_gram(x3, xq, 0.5, 1.0)
        k_ss = np.ones(9)
        r_star = np.full(9, 0.05)
        mu_m, var_m = predict_compressed(merged, ks2, k_ss, r_star, np.zeros(9))
        mu_s, var_s = predict_compressed(split, ks3, k_ss, r_star, np.zeros(9))
        np.testing.assert_allclose(mu_m, mu_s, atol=1e-8)
        np.testing.assert_allclose(var_m, var_s, atol=1e-8)

    def test_factorization_reused_across_queries(self):
        rng = np.random.default_rng(7)
        sys, x, _, _, hyper = random_instance(rng, n=10)
        with count_factorizations() as sizes:
            factor = sys.factorize()
            for m in (5, 9, 13):
                xq, k_star, k_ss, r_star, mean_star = self._query_pieces(sys, x, hyper, m)
                predict_compressed(sys, k_star, k_ss, r_star, mean_star, factor=factor)
        assert sizes == [10]


class TestExactnessSweep:
    @pytest.mark.parametrize("het", [False, True], ids=["constant-noise", "varying-noise"])
    def test_fifty_random_instances(self, het):
        rng = np.random.default_rng(123 if het else 321)
        for trial in range(50):
            sys, x, raw_idx, y_raw, hyper = random_instance(rng, het=het)
            k_nn, r_nn, resid = dense_pieces(sys, raw_idx, y_raw)
            ll_c = loglik_compressed(sys)
            ll_d = naive_loglik(k_nn + np.diag(r_nn), resid)
            assert abs(ll_c - ll_d) <= 1e-8 * max(1.0, abs(ll_d))
            lengthscale, amplitude = hyper
            xq = np.linspace(0.0, 1.0, 11)
            k_star = se_gram(x, xq, lengthscale, amplitude)
            k_ss = np.full(11, amplitude)
            r_star = np.full(11, float(sys.r_n.mean()))
            mean_star = np.zeros(11)
            mu_c, var_c = predict_compressed(sys, k_star, k_ss, r_star, mean_star)
            C = k_nn + np.diag(r_nn)
            ksf = k_star[raw_idx, :]
            mu_d = np.linalg.solve(C, resid) @ ksf
            var_d = k_ss + r_star - np.einsum("ij,ij->j", ksf, np.linalg.solve(C, ksf))
            np.testing.assert_allclose(mu_c, mu_d, atol=1e-8)
            np.testing.assert_allclose(var_c, var_d, atol=1e-8)


class TestSurrogateExpansion:
    def test_statistics_reproduced_exactly(self):
        rng = np.random.default_rng(8)
        counts = np.array([1, 2, 3, 4, 7])
        ybar = rng.normal(size=5)
        scatter = np.abs(rng.normal(size=5)) * (counts > 1)
        idx, values = expand_surrogate(counts, ybar, scatter)
        assert values.size == counts.sum()
        for i in range(5):
            block = values[idx == i]
            assert block.size == counts[i]
            np.testing.assert_allclose(block.mean(), ybar[i], atol=1e-12)
            np.testing.assert_allclose(
                ((block - block.mean()) ** 2).sum(), scatter[i], atol=1e-10
            )

    def test_expand_system_round_trips_the_likelihood(self):
        rng = np.random.default_rng(9)
        sys, *_ = random_instance(rng, n=7)
        k_nn, r_nn, resid, idx = expand_system(sys)
        np.testing.assert_allclose(
            loglik_dense(k_nn, r_nn, resid), loglik_compressed(sys), atol=1e-8
        )


class TestJitteredFactorization:
    def test_clean_matrix_needs_no_jitter(self):
        rng = np.random.default_rng(10)
        A = rng.normal(size=(6, 6))
        S = A @ A.T + 6 * np.eye(6)
        factor, used = cho_factor_jittered(S, scale=float(np.mean(np.diag(S))))
        assert used == 0.0

    def test_semidefinite_matrix_gets_jitter(self):
        v = np.ones((4, 1))
        S = v @ v.T  # rank one
        factor, used = cho_factor_jittered(S, scale=1.0)
        assert used > 0.0

    def test_hopeless_matrix_raises(self):
        S = np.diag([1.0, -5.0])
        with pytest.raises(NumericalError):
            cho_factor_jittered(S, scale=1.0)


class TestBench:
    def test_report_rows_and_exactness(self):
        rows = bench_replication(n=25, a_values=(1, 4), repeats=5, seed=0)
        assert [r["a"] for r in rows] == [1, 4]
        for row in rows:
            assert set(row) == {
                "n", "a", "N", "t_dense_ms", "t_compressed_ms", "speedup", "max_abs_diff",
            }
            assert row["N"] == row["n"] * row["a"]
            assert row["max_abs_diff"] <= 1e-8
            assert row["t_dense_ms"] > 0 and row["t_compressed_ms"] > 0

    def test_no_replication_means_no_advantage(self):
        rows = bench_replication(n=60, a_values=(1,), repeats=15, seed=1)
        assert 0.5 <= rows[0]["speedup"] <= 2.0
