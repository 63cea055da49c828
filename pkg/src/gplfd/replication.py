"""Exact inference on replication-compressed training data.

When N observations fall on n unique input locations, likelihood and
predictive computations factor through the n-point system
``S = K_n + A^-1 R_n`` (counts ``A``, per-location noise ``R_n``) plus
per-location means and squared-deviation sums.  Results equal the dense
N-point computation exactly, not approximately; the dense route is kept
alongside as an oracle and for benchmarking.
"""

from __future__ import annotations

import math
import time
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

_LOG_2PI = math.log(2.0 * math.pi)

_JITTER_START = 1e-8
_JITTER_STOP = 1e-4


class NumericalError(RuntimeError):
    """Linear algebra failed even after jitter escalation."""


_counters: list[list[int]] = []


@contextmanager
def count_factorizations() -> Iterator[list[int]]:
    """Collect the sizes of successful Cholesky factorizations in a block."""
    sizes: list[int] = []
    _counters.append(sizes)
    try:
        yield sizes
    finally:
        _counters.remove(sizes)


def cho_factor_jittered(S: np.ndarray, scale: float) -> tuple[tuple[np.ndarray, bool], float]:
    """Cholesky with escalating diagonal jitter.

    Jitter starts at 1e-8 times ``scale`` and grows tenfold up to 1e-4 times
    ``scale``; beyond that a :class:`NumericalError` is raised.  Returns the
    factor and the jitter that was actually added (0.0 on a clean pass).
    """
    try:
        factor = cho_factor(S, lower=True)
        for sizes in _counters:
            sizes.append(S.shape[0])
        return factor, 0.0
    except LinAlgError:
        pass
    jitter = _JITTER_START
    while jitter <= _JITTER_STOP * (1.0 + 1e-12):
        try:
            factor = cho_factor(S + (jitter * scale) * np.eye(S.shape[0]), lower=True)
            for sizes in _counters:
                sizes.append(S.shape[0])
            return factor, jitter * scale
        except LinAlgError:
            jitter *= 10.0
    raise NumericalError(
        f"matrix of size {S.shape[0]} not positive definite after jitter up to {_JITTER_STOP * scale:g}"
    )


@dataclass(frozen=True)
class CompressedSystem:
    """Sufficient statistics and prior pieces for one output channel.

    ``k_n`` is the prior covariance at the n unique locations, ``r_n`` the
    noise variance there, ``counts`` the replication counts, ``ybar`` the
    per-location output means, ``scatter`` the per-location sums of squared
    deviations from those means, and ``mean`` the prior mean evaluated at
    the locations.
    """

    k_n: np.ndarray
    r_n: np.ndarray
    counts: np.ndarray
    ybar: np.ndarray
    scatter: np.ndarray
    mean: np.ndarray

    def __post_init__(self) -> None:
        n = self.k_n.shape[0]
        if self.k_n.shape != (n, n):
            raise ValueError("k_n must be square")
        for name in ("r_n", "counts", "ybar", "scatter", "mean"):
            v = getattr(self, name)
            if v.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
        if np.any(self.r_n <= 0.0):
            raise NumericalError("noise variances must be positive")
        if np.any(self.counts < 1):
            raise ValueError("counts must be at least 1")
        if np.any(self.scatter < -1e-12):
            raise ValueError("squared-deviation sums must be non-negative")

    @property
    def n(self) -> int:
        return int(self.k_n.shape[0])

    @property
    def total_count(self) -> int:
        return int(self.counts.sum())

    @property
    def rhs(self) -> np.ndarray:
        """Residual means the solve acts on."""
        return self.ybar - self.mean

    @property
    def quad_full(self) -> float:
        """Residual quadratic against the noise alone, all N points."""
        e = self.rhs
        a = self.counts.astype(np.float64)
        return float(((a * e * e + self.scatter) / self.r_n).sum())

    def system_matrix(self) -> np.ndarray:
        S = self.k_n.copy()
        S[np.diag_indices_from(S)] += self.r_n / self.counts
        return S

    def factorize(self) -> tuple[np.ndarray, bool]:
        scale = float(np.mean(np.diag(self.k_n)) + np.mean(self.r_n / self.counts))
        factor, _ = cho_factor_jittered(self.system_matrix(), scale)
        return factor


def loglik_compressed(sys: CompressedSystem, factor: tuple[np.ndarray, bool] | None = None) -> float:
    """Log marginal likelihood of all N observations, computed at size n.

    Identical (to floating point) to the dense evaluation on the expanded
    data: the per-location scatter enters only through the noise term and
    the determinant picks up (count - 1) copies of each noise variance.
    """
    if factor is None:
        factor = sys.factorize()
    e = sys.rhs
    alpha = cho_solve(factor, e)
    a = sys.counts.astype(np.float64)
    quad = float((sys.scatter / sys.r_n).sum() + e @ alpha)
    logdet_s = 2.0 * float(np.log(np.diag(factor[0])).sum())
    logdet_noise = float(((a - 1.0) * np.log(sys.r_n)).sum() + np.log(a).sum())
    n_total = float(sys.total_count)
    return -0.5 * (quad + logdet_s + logdet_noise + n_total * _LOG_2PI)


def solve_alpha(sys: CompressedSystem, factor: tuple[np.ndarray, bool] | None = None) -> np.ndarray:
    """Weights ``S^-1 (ybar - mean)`` reused by every prediction."""
    if factor is None:
        factor = sys.factorize()
    return cho_solve(factor, sys.rhs)


def predict_compressed(
    sys: CompressedSystem,
    k_star: np.ndarray,
    k_ss: np.ndarray,
    r_star: np.ndarray,
    mean_star: np.ndarray,
    factor: tuple[np.ndarray, bool] | None = None,
    full_cov: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean and (co)variance at query points.

    ``k_star`` is n-by-m prior covariance against the unique training
    locations, ``k_ss`` the m-vector prior variance (or m-by-m prior
    covariance when ``full_cov``), ``r_star`` the query noise floor added to
    the diagonal.  Returns ``(mean, var)`` or ``(mean, cov)``.
    """
    if factor is None:
        factor = sys.factorize()
    alpha = cho_solve(factor, sys.rhs)
    mu = mean_star + k_star.T @ alpha
    v = cho_solve(factor, k_star)
    if full_cov:
        cov = k_ss - k_star.T @ v
        cov = 0.5 * (cov + cov.T)
        cov[np.diag_indices_from(cov)] += r_star
        return mu, cov
    var = k_ss + r_star - np.einsum("ij,ij->j", k_star, v)
    return mu, np.maximum(var, 0.0)


# ---------------------------------------------------------------------------
# Dense oracle


def loglik_dense(k_nn: np.ndarray, r_nn: np.ndarray, resid: np.ndarray) -> float:
    """Straight N-point log marginal likelihood; the reference route."""
    C = k_nn + np.diag(r_nn)
    scale = float(np.mean(np.diag(C)))
    factor, _ = cho_factor_jittered(C, scale)
    alpha = cho_solve(factor, resid)
    logdet = 2.0 * float(np.log(np.diag(factor[0])).sum())
    return -0.5 * (float(resid @ alpha) + logdet + resid.size * _LOG_2PI)


def predict_dense(
    k_nn: np.ndarray,
    r_nn: np.ndarray,
    resid: np.ndarray,
    k_star: np.ndarray,
    k_ss: np.ndarray,
    r_star: np.ndarray,
    mean_star: np.ndarray,
    full_cov: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Dense predictive distribution; the reference route."""
    C = k_nn + np.diag(r_nn)
    scale = float(np.mean(np.diag(C)))
    factor, _ = cho_factor_jittered(C, scale)
    alpha = cho_solve(factor, resid)
    mu = mean_star + k_star.T @ alpha
    v = cho_solve(factor, k_star)
    if full_cov:
        cov = k_ss - k_star.T @ v
        cov = 0.5 * (cov + cov.T)
        cov[np.diag_indices_from(cov)] += r_star
        return mu, cov
    var = k_ss + r_star - np.einsum("ij,ij->j", k_star, v)
    return mu, np.maximum(var, 0.0)


def expand_surrogate(
    counts: np.ndarray,
    ybar: np.ndarray,
    scatter: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Synthesise per-observation values matching the compressed statistics.

    Each location i gets ``counts[i]`` values with mean exactly ``ybar[i]``
    and squared-deviation sum exactly ``scatter[i]`` (symmetric pairs at
    +-delta, plus one central value when the count is odd).  Likelihood and
    prediction depend on the data only through those statistics, so the
    expansion is an exact stand-in for the original observations.  Returns
    (location index per row, value per row).
    """
    groups: list[int] = []
    values: list[float] = []
    for i, (a, yb, s) in enumerate(zip(counts, ybar, scatter)):
        a = int(a)
        if a == 1:
            groups.append(i)
            values.append(float(yb))
            continue
        pairs = a // 2
        delta = math.sqrt(float(s) / (2.0 * pairs)) if s > 0 else 0.0
        for _ in range(pairs):
            groups.append(i)
            values.append(float(yb) + delta)
            groups.append(i)
            values.append(float(yb) - delta)
        if a % 2 == 1:
            groups.append(i)
            values.append(float(yb))
    return np.asarray(groups, dtype=np.intp), np.asarray(values, dtype=np.float64)


def expand_system(sys: CompressedSystem) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Dense pieces (K_NN, r_NN, resid, location index) equivalent to ``sys``."""
    idx, y = expand_surrogate(sys.counts, sys.ybar, sys.scatter)
    k_nn = sys.k_n[np.ix_(idx, idx)]
    r_nn = sys.r_n[idx]
    resid = y - sys.mean[idx]
    return k_nn, r_nn, resid, idx


# ---------------------------------------------------------------------------
# Benchmark


def _bench_data(n: int, a: int, seed: int, lengthscale: float = 0.2, noise: float = 0.05):
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, n)
    tau = np.abs(x[:, None] - x[None, :])
    k_n = np.exp(-0.5 * (tau / lengthscale) ** 2)
    k_n[np.diag_indices_from(k_n)] += 1e-8
    y = np.sin(2.0 * math.pi * x)[:, None] + math.sqrt(noise) * rng.standard_normal((n, a))
    ybar = y.mean(axis=1)
    scatter = ((y - ybar[:, None]) ** 2).sum(axis=1)
    counts = np.full(n, a, dtype=np.int64)
    r_n = np.full(n, noise)
    mean = np.zeros(n)
    sys = CompressedSystem(k_n=k_n, r_n=r_n, counts=counts, ybar=ybar, scatter=scatter, mean=mean)
    xq = np.linspace(0.0, 1.0, 100)
    tau_q = np.abs(x[:, None] - xq[None, :])
    k_star = np.exp(-0.5 * (tau_q / lengthscale) ** 2)
    k_ss = np.ones(xq.size)
    r_star = np.full(xq.size, noise)
    return sys, k_star, k_ss, r_star


def bench_replication(
    n: int,
    a_values: Sequence[int],
    repeats: int = 20,
    seed: int = 0,
) -> list[dict[str, float]]:
    """Time one likelihood-plus-prediction cycle, dense versus compressed.

    Both routes see data with identical sufficient statistics; the dense
    route works on the surrogate expansion.  Rows carry medians over
    ``repeats`` interleaved measurements and the worst absolute disagreement
    across log likelihood, predictive mean, and predictive variance.
    """
    rows: list[dict[str, float]] = []
    for a in a_values:
        sys, k_star, k_ss, r_star = _bench_data(n, a, seed)
        k_nn, r_nn, resid, idx = expand_system(sys)
        k_star_dense = k_star[idx]
        mean_star = np.zeros(k_ss.size)

        def run_dense():
            ll = loglik_dense(k_nn, r_nn, resid)
            mu, var = predict_dense(k_nn, r_nn, resid, k_star_dense, k_ss, r_star, mean_star)
            return ll, mu, var

        def run_compressed():
            ll = loglik_compressed(sys)
            mu, var = predict_compressed(sys, k_star, k_ss, r_star, mean_star)
            return ll, mu, var

        run_dense()
        run_compressed()  # warm the caches before timing
        t_dense: list[float] = []
        t_comp: list[float] = []
        diff = 0.0
        for _ in range(repeats):
            t0 = time.perf_counter()
            ll_d, mu_d, var_d = run_dense()
            t1 = time.perf_counter()
            ll_c, mu_c, var_c = run_compressed()
            t2 = time.perf_counter()
            t_dense.append(t1 - t0)
            t_comp.append(t2 - t1)
            diff = max(
                diff,
                abs(ll_d - ll_c),
                float(np.abs(mu_d - mu_c).max()),
                float(np.abs(var_d - var_c).max()),
            )
        td = float(np.median(t_dense) * 1e3)
        tc = float(np.median(t_comp) * 1e3)
        rows.append(
            {
                "n": float(n),
                "a": float(a),
                "N": float(n * a),
                "t_dense_ms": td,
                "t_compressed_ms": tc,
                "speedup": td / tc,
                "max_abs_diff": diff,
            }
        )
    return rows
