"""Via-point modulation of a fitted policy.

A desired pass-through point is expressed as a second GP sharing the
policy's kernel and frozen hyperparameters, conditioned only on the via
points (their ``strength`` acting as observation variance).  The policy and
via distributions over one query grid are then fused as a product of
Gaussians, which drags the trajectory through the via points while tightening
the uncertainty nearby.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve

from .domain import DataError, TaskPoint
from .gp import GPModel, PredictiveDistribution, _check_query
from .kernels import cross_gram, prior_variance
from .replication import cho_factor_jittered

_RIDGE = 1e-10


@dataclass(frozen=True)
class ViaPoint:
    """One desired pass-through: location, target outputs, and strengths.

    ``strength`` is the variance the via observation is trusted at, one value
    per output; smaller pulls harder.
    """

    point: TaskPoint
    y: np.ndarray
    strength: np.ndarray

    def __post_init__(self) -> None:
        y = np.atleast_1d(np.asarray(self.y, dtype=np.float64))
        s = np.atleast_1d(np.asarray(self.strength, dtype=np.float64))
        if s.size == 1 and y.size > 1:
            s = np.full(y.size, float(s[0]))
        if s.shape != y.shape:
            raise DataError("via strengths must match via outputs")
        if np.any(s <= 0.0) or not np.all(np.isfinite(s)):
            raise DataError("via strengths must be positive")
        if not np.all(np.isfinite(y)):
            raise DataError("via targets must be finite")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "strength", s)


@dataclass(frozen=True)
class ViaPointSet:
    points: tuple[ViaPoint, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", tuple(self.points))
        if not self.points:
            raise DataError("no via points")
        n_out = self.points[0].y.size
        for vp in self.points:
            if vp.y.size != n_out:
                raise DataError("via points disagree on output count")

    @property
    def n_outputs(self) -> int:
        return int(self.points[0].y.size)

    def locations(self) -> list[TaskPoint]:
        return [vp.point for vp in self.points]


def viapoint_distribution(
    via: ViaPointSet,
    models: Sequence[GPModel],
    query: Sequence[TaskPoint],
    full_cov: bool = True,
) -> PredictiveDistribution:
    """GP conditioned on the via points alone, at the query grid.

    Reuses each output's policy kernel and prior mean with hyperparameters
    frozen; the via strengths act as noise at the via locations.  No noise
    floor is added at the query grid, so an exact (zero-strength-limit) via
    pins the distribution down completely there.
    """
    if len(models) != via.n_outputs:
        raise DataError(f"{len(models)} models but via points carry {via.n_outputs} outputs")
    schema = models[0].schema
    _check_query(schema, query)
    locs = via.locations()
    _check_query(schema, locs)
    m = len(query)
    means = np.empty((m, len(models)))
    vars_ = np.empty((m, len(models)))
    covs = np.empty((len(models), m, m)) if full_cov else None
    for j, model in enumerate(models):
        y_v = np.array([vp.y[j] for vp in via.points])
        r_v = np.array([vp.strength[j] for vp in via.points])
        k_vv = cross_gram(model.kernel, schema, locs, locs)
        k_vv = 0.5 * (k_vv + k_vv.T)
        k_vv[np.diag_indices_from(k_vv)] += r_v
        scale = float(np.mean(np.diag(k_vv)))
        factor, _ = cho_factor_jittered(k_vv, scale)
        k_vq = cross_gram(model.kernel, schema, locs, query)
        alpha = cho_solve(factor, y_v - model.mean_const)
        mu = model.mean_const + k_vq.T @ alpha
        v = cho_solve(factor, k_vq)
        means[:, j] = mu
        if full_cov:
            k_qq = cross_gram(model.kernel, schema, query, query)
            cov = k_qq - k_vq.T @ v
            cov = 0.5 * (cov + cov.T)
            assert covs is not None
            covs[j] = cov
            vars_[:, j] = np.maximum(np.diag(cov), 0.0)
        else:
            k_qq_diag = prior_variance(model.kernel, schema, query)
            vars_[:, j] = np.maximum(k_qq_diag - np.einsum("ij,ij->j", k_vq, v), 0.0)
    return PredictiveDistribution(query=tuple(query), mean=means, var=vars_, cov=covs)


def condition(
    policy: PredictiveDistribution,
    via: PredictiveDistribution,
    ridge: float = _RIDGE,
) -> PredictiveDistribution:
    """Product-of-Gaussians fusion of a policy and a via distribution.

    Both distributions must live on the same query grid with the same
    outputs.  With full covariances the fusion is joint; otherwise it acts
    marginal by marginal.  The result is symmetric in its two arguments.
    """
    if policy.query != via.query:
        raise DataError("policy and via distributions use different query grids")
    if policy.n_outputs != via.n_outputs:
        raise DataError("policy and via distributions disagree on outputs")
    m = len(policy.query)
    n_out = policy.n_outputs
    mean = np.empty((m, n_out))
    var = np.empty((m, n_out))
    if policy.cov is not None and via.cov is not None:
        cov = np.empty((n_out, m, m))
        for j in range(n_out):
            sd = policy.cov[j]
            sv = via.cov[j]
            s = sd + sv
            s[np.diag_indices_from(s)] += ridge
            scale = float(np.mean(np.diag(s)))
            factor, _ = cho_factor_jittered(s, scale)
            # mu = Sv s^-1 mu_d + Sd s^-1 mu_v ; Sigma = Sd s^-1 Sv
            mean[:, j] = sv @ cho_solve(factor, policy.mean[:, j]) + sd @ cho_solve(
                factor, via.mean[:, j]
            )
            fused = sd @ cho_solve(factor, sv)
            fused = 0.5 * (fused + fused.T)
            cov[j] = fused
            var[:, j] = np.maximum(np.diag(fused), 0.0)
        return PredictiveDistribution(query=policy.query, mean=mean, var=var, cov=cov)
    vd = policy.var
    vv = via.var
    s = vd + vv + ridge
    mean = (vv * policy.mean + vd * via.mean) / s
    var = np.maximum(vd * vv / s, 0.0)
    return PredictiveDistribution(query=policy.query, mean=mean, var=var)


def modulate(
    models: Sequence[GPModel],
    via: ViaPointSet,
    query: Sequence[TaskPoint],
    full_cov: bool = True,
) -> PredictiveDistribution:
    """Predict the policy on a grid and drag it through the via points."""
    from .gp import predict_mogp

    policy = predict_mogp(models, query, full_cov=full_cov)
    via_dist = viapoint_distribution(via, models, query, full_cov=full_cov)
    return condition(policy, via_dist)
