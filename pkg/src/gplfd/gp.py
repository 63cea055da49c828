"""Policy models: heteroscedastic GP regression on compressed demonstrations.

A policy is one :class:`GPModel` per output channel, all sharing the task
schema and trained on the same compressed dataset.  Noise is either a single
constant variance or a latent log-variance GP refined by a fixed-point loop:
fit the model, regress the log of the observed per-location variances,
plug the smoothed variances back in, refit, and keep the best-likelihood
iterate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Any, Mapping, Sequence

import numpy as np

from .domain import (
    CompressedDataset,
    DegenerateDataError,
    SchemaError,
    TaskPoint,
    TaskSchema,
    schema_from_dict,
    schema_to_dict,
    validate_point,
)
from .hyperopt import OptControl, OptResult, optimize
from .kernels import (
    HyperParams,
    InfeasibleParameterError,
    KernelComponent,
    KernelSpec,
    _log_param,
    apply_kernel_params,
    cross_gram,
    default_kernel_spec,
    gram,
    kernel_params,
    prior_variance,
)
from .replication import (
    CompressedSystem,
    NumericalError,
    expand_system,
    loglik_compressed,
    loglik_dense,
    predict_compressed,
    predict_dense,
)

MEAN_CONSTANT = "constant"
MEAN_ZERO = "zero"


@dataclass(frozen=True)
class NoiseModel:
    """Observation-noise variance as a function of the task point.

    ``constant`` carries one variance; ``latent`` wraps a GP over the log
    variance whose predictive mean sets the local noise level.
    """

    mode: str
    variance: float = 0.0
    latent: "GPModel | None" = None

    def __post_init__(self) -> None:
        if self.mode == "constant":
            if not (self.variance > 0.0 and np.isfinite(self.variance)):
                raise NumericalError("constant noise variance must be positive")
        elif self.mode == "latent":
            if self.latent is None:
                raise ValueError("latent noise needs a model")
        else:
            raise ValueError(f"unknown noise mode {self.mode!r}")

    def noise_at(self, points: Sequence[TaskPoint]) -> np.ndarray:
        if self.mode == "constant":
            return np.full(len(points), self.variance)
        assert self.latent is not None
        return np.exp(predict_mean(self.latent, points))


class GPModel:
    """One fitted output channel.  Treat instances as immutable.

    The training system factorization is computed once on first use and
    cached; predictions reuse it.
    """

    def __init__(
        self,
        schema: TaskSchema,
        kernel: KernelSpec,
        noise: NoiseModel,
        train: CompressedDataset,
        output_index: int = 0,
        mean_const: float = 0.0,
        jitter: float = 1e-8,
        diagnostics: Mapping[str, Any] | None = None,
    ) -> None:
        kernel.validate(schema)
        if not 0 <= output_index < train.n_outputs:
            raise ValueError(f"output index {output_index} out of range")
        self.schema = schema
        self.kernel = kernel
        self.noise = noise
        self.train = train
        self.output_index = output_index
        self.mean_const = float(mean_const)
        self.jitter = float(jitter)
        self.diagnostics = dict(diagnostics or {})
        self._system: CompressedSystem | None = None
        self._factor: tuple[np.ndarray, bool] | None = None
        self._alpha: np.ndarray | None = None

    def system(self) -> CompressedSystem:
        if self._system is None:
            pts = self.train.unique_points
            self._system = CompressedSystem(
                k_n=gram(self.kernel, self.schema, pts, self.jitter),
                r_n=self.noise.noise_at(pts),
                counts=self.train.counts,
                ybar=self.train.means[:, self.output_index].copy(),
                scatter=self.train.sq_dev[:, self.output_index].copy(),
                mean=np.full(self.train.n, self.mean_const),
            )
        return self._system

    def factor(self) -> tuple[np.ndarray, bool]:
        if self._factor is None:
            self._factor = self.system().factorize()
        return self._factor

    def alpha(self) -> np.ndarray:
        if self._alpha is None:
            from scipy.linalg import cho_solve

            self._alpha = cho_solve(self.factor(), self.system().rhs)
        return self._alpha


@dataclass(frozen=True)
class PredictiveDistribution:
    """Marginal predictive moments at query points, one column per output.

    ``cov`` is present only when the prediction was made with full
    covariance; it stacks one m-by-m matrix per output.
    """

    query: tuple[TaskPoint, ...]
    mean: np.ndarray
    var: np.ndarray
    cov: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "query", tuple(self.query))
        mean = np.atleast_2d(np.asarray(self.mean, dtype=np.float64))
        var = np.atleast_2d(np.asarray(self.var, dtype=np.float64))
        if mean.shape[0] != len(self.query):
            raise ValueError("mean rows must match query points")
        if var.shape != mean.shape:
            raise ValueError("var must match mean")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def n_outputs(self) -> int:
        return int(self.mean.shape[1])

    def std(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.var, 0.0))


def _check_query(schema: TaskSchema, query: Sequence[TaskPoint]) -> None:
    if not query:
        raise SchemaError("empty query")
    problems: list[str] = []
    for i, p in enumerate(query):
        for msg in validate_point(schema, p):
            problems.append(f"query[{i}]: {msg}")
    if problems:
        raise SchemaError("; ".join(problems[:10]))


def log_marginal_likelihood(model: GPModel) -> float:
    """Exact log marginal likelihood of all N training observations."""
    return loglik_compressed(model.system(), model.factor())


def predict_mean(model: GPModel, query: Sequence[TaskPoint]) -> np.ndarray:
    """Predictive mean only; skips every covariance computation."""
    k_star = cross_gram(model.kernel, model.schema, model.train.unique_points, query)
    return model.mean_const + k_star.T @ model.alpha()


def predict(model: GPModel, query: Sequence[TaskPoint], full_cov: bool = False) -> PredictiveDistribution:
    """Predictive distribution of one output channel at query points.

    The predictive covariance includes the local observation-noise floor;
    far from the data it approaches the prior variance plus that floor.
    """
    _check_query(model.schema, query)
    sys = model.system()
    k_star = cross_gram(model.kernel, model.schema, model.train.unique_points, query)
    r_star = model.noise.noise_at(query)
    mean_star = np.full(len(query), model.mean_const)
    if full_cov:
        k_ss = cross_gram(model.kernel, model.schema, query, query)
        k_ss = 0.5 * (k_ss + k_ss.T)
        mu, cov = predict_compressed(
            sys, k_star, k_ss, r_star, mean_star, factor=model.factor(), full_cov=True
        )
        var = np.maximum(np.diag(cov), 0.0)
        return PredictiveDistribution(
            query=tuple(query), mean=mu[:, None], var=var[:, None], cov=cov[None, :, :]
        )
    k_ss = prior_variance(model.kernel, model.schema, query)
    mu, var = predict_compressed(
        sys, k_star, k_ss, r_star, mean_star, factor=model.factor(), full_cov=False
    )
    return PredictiveDistribution(query=tuple(query), mean=mu[:, None], var=var[:, None])


def predict_via_dense(
    model: GPModel, query: Sequence[TaskPoint], full_cov: bool = False
) -> PredictiveDistribution:
    """Prediction through the dense N-point route; slow, for verification.

    Works on the surrogate expansion of the compressed statistics, which is
    exact because the predictive distribution depends on the data only
    through those statistics.
    """
    _check_query(model.schema, query)
    sys = model.system()
    k_nn, r_nn, resid, idx = expand_system(sys)
    k_star_n = cross_gram(model.kernel, model.schema, model.train.unique_points, query)
    k_star = k_star_n[idx]
    r_star = model.noise.noise_at(query)
    mean_star = np.full(len(query), model.mean_const)
    if full_cov:
        k_ss = cross_gram(model.kernel, model.schema, query, query)
        k_ss = 0.5 * (k_ss + k_ss.T)
        mu, cov = predict_dense(k_nn, r_nn, resid, k_star, k_ss, r_star, mean_star, full_cov=True)
        var = np.maximum(np.diag(cov), 0.0)
        return PredictiveDistribution(
            query=tuple(query), mean=mu[:, None], var=var[:, None], cov=cov[None, :, :]
        )
    k_ss = prior_variance(model.kernel, model.schema, query)
    mu, var = predict_dense(k_nn, r_nn, resid, k_star, k_ss, r_star, mean_star, full_cov=False)
    return PredictiveDistribution(query=tuple(query), mean=mu[:, None], var=var[:, None])


def predict_mogp(
    models: Sequence[GPModel], query: Sequence[TaskPoint], full_cov: bool = False
) -> PredictiveDistribution:
    """Stack per-output predictions into one distribution."""
    if not models:
        raise ValueError("no models")
    parts = [predict(m, query, full_cov=full_cov) for m in models]
    mean = np.column_stack([p.mean[:, 0] for p in parts])
    var = np.column_stack([p.var[:, 0] for p in parts])
    cov = None
    if full_cov:
        assert all(p.cov is not None for p in parts)
        cov = np.stack([p.cov[0] for p in parts])  # type: ignore[index]
    return PredictiveDistribution(query=tuple(query), mean=mean, var=var, cov=cov)


# ---------------------------------------------------------------------------
# Fitting


@dataclass(frozen=True)
class FitControls:
    """Budgets for the fixed-point heteroscedastic fit.

    ``max_iter`` counts noise-refinement iterations; zero (or
    ``heteroscedastic=False``) stops after the constant-noise fit.  The loop
    ends early when the likelihood improves by less than ``tol``; whichever
    iterate scored best is returned.
    """

    heteroscedastic: bool = True
    max_iter: int = 10
    tol: float = 1e-4
    mean: str = MEAN_CONSTANT
    jitter: float = 1e-8
    compressed: bool = True
    opt: OptControl = OptControl()
    latent_opt: OptControl = OptControl(n_starts=4, max_evals=200)
    refit_opt: OptControl = OptControl(n_starts=3, max_evals=300)

    def __post_init__(self) -> None:
        if self.mean not in (MEAN_CONSTANT, MEAN_ZERO):
            raise ValueError(f"unknown mean mode {self.mean!r}")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")


def _grand_mean(counts: np.ndarray, ybar: np.ndarray) -> float:
    a = counts.astype(np.float64)
    return float(a @ ybar / a.sum())


def _ml_fit(
    schema: TaskSchema,
    pts: Sequence[TaskPoint],
    counts: np.ndarray,
    ybar: np.ndarray,
    scatter: np.ndarray,
    mean_const: float,
    template: KernelSpec,
    opt: OptControl,
    jitter: float,
    output_variance: float,
    fixed_r: np.ndarray | None = None,
    warm: np.ndarray | None = None,
    compressed: bool = True,
) -> tuple[KernelSpec, float | None, float, OptResult, HyperParams]:
    """Maximise the marginal log likelihood over kernel (and noise) params."""
    enc = schema.encode(pts)
    hp = kernel_params(template, schema, enc, output_variance)
    if fixed_r is None:
        hp = HyperParams(hp.params + (_log_param("log_noise", 1e-8 * output_variance, output_variance),))
    mean_vec = np.full(len(pts), mean_const)

    def objective(vec: np.ndarray) -> float:
        nat = hp.with_vector(vec).natural()
        try:
            spec = apply_kernel_params(template, schema, nat)
            k_n = gram(spec, schema, pts, jitter)
            r_n = np.full(len(pts), nat["log_noise"]) if fixed_r is None else fixed_r
            sys = CompressedSystem(
                k_n=k_n, r_n=r_n, counts=counts, ybar=ybar, scatter=scatter, mean=mean_vec
            )
            if compressed:
                return loglik_compressed(sys)
            k_nn, r_nn, resid, _ = expand_system(sys)
            return loglik_dense(k_nn, r_nn, resid)
        except (NumericalError, InfeasibleParameterError):
            return -np.inf

    extra = [] if warm is None else [warm]
    res = optimize(objective, hp.bounds(), opt, extra_starts=extra)
    nat = hp.with_vector(res.theta).natural()
    spec = apply_kernel_params(template, schema, nat)
    noise = nat["log_noise"] if fixed_r is None else None
    return spec, noise, res.value, res, hp


def _latent_targets(
    ybar: np.ndarray,
    scatter: np.ndarray,
    counts: np.ndarray,
    mu_at_train: np.ndarray,
    output_variance: float,
) -> np.ndarray:
    """Log of the local noise-variance evidence at each unique location.

    Locations with replicates use the unbiased variance estimate; singletons
    fall back to the squared residual against the current fit.  A floor of
    1e-10 times the squared output range keeps the log finite.
    """
    rng = float(ybar.max() - ybar.min())
    floor = 1e-10 * (rng * rng if rng > 0.0 else output_variance)
    a = counts.astype(np.float64)
    v = np.where(a >= 2.0, scatter / np.maximum(a - 1.0, 1.0), (ybar - mu_at_train) ** 2)
    return np.log(np.maximum(v, floor))


def _fit_latent(
    schema: TaskSchema,
    pts: Sequence[TaskPoint],
    z: np.ndarray,
    template: KernelSpec,
    opt: OptControl,
    jitter: float,
) -> GPModel:
    """Standard constant-noise GP over the log-variance targets."""
    n = len(pts)
    data = CompressedDataset(
        unique_points=tuple(pts),
        counts=np.ones(n, dtype=np.int64),
        means=z[:, None],
        sq_dev=np.zeros((n, 1)),
    )
    var_z = float(np.var(z))
    if var_z <= 0.0:
        var_z = 1.0
    mean_z = float(np.mean(z))
    spec, noise, value, res, _ = _ml_fit(
        schema,
        pts,
        data.counts,
        z,
        np.zeros(n),
        mean_z,
        template,
        opt,
        jitter,
        var_z,
    )
    assert noise is not None
    return GPModel(
        schema=schema,
        kernel=spec,
        noise=NoiseModel(mode="constant", variance=noise),
        train=data,
        output_index=0,
        mean_const=mean_z,
        jitter=jitter,
        diagnostics={"log_likelihood": value, "n_evals": res.n_evals},
    )


def fit_heteroscedastic(
    schema: TaskSchema,
    data: CompressedDataset,
    kernel_spec: KernelSpec | None = None,
    controls: FitControls | None = None,
    output_index: int = 0,
) -> GPModel:
    """Fit one output channel with input-dependent noise.

    Starts from a constant-noise maximum-likelihood fit, then alternates:
    regress log local variances on the task variables, plug the smoothed
    noise back into the policy likelihood, refit the kernel.  Keeps whichever
    iterate had the highest training likelihood.
    """
    controls = controls or FitControls()
    template = kernel_spec or default_kernel_spec(schema)
    template.validate(schema)
    pts = list(data.unique_points)
    counts = data.counts
    ybar = data.means[:, output_index].copy()
    scatter = data.sq_dev[:, output_index].copy()
    var_y = data.output_variance(output_index)
    if var_y <= 0.0:
        raise DegenerateDataError("training outputs carry no variance")
    mean_const = _grand_mean(counts, ybar) if controls.mean == MEAN_CONSTANT else 0.0

    spec0, noise0, ll0, res0, hp0 = _ml_fit(
        schema, pts, counts, ybar, scatter, mean_const, template,
        controls.opt, controls.jitter, var_y, compressed=controls.compressed,
    )
    assert noise0 is not None
    history: list[dict[str, float]] = [{"iteration": 0, "log_likelihood": ll0}]
    model0 = GPModel(
        schema=schema,
        kernel=spec0,
        noise=NoiseModel(mode="constant", variance=noise0),
        train=data,
        output_index=output_index,
        mean_const=mean_const,
        jitter=controls.jitter,
    )
    candidates: list[tuple[float, GPModel]] = [(ll0, model0)]

    if controls.heteroscedastic and controls.max_iter > 0:
        current = model0
        prev_ll = ll0
        warm = res0.theta[:-1]  # kernel block; the noise coordinate is last
        for it in range(1, controls.max_iter + 1):
            mu_hat = predict_mean(current, pts)
            z = _latent_targets(ybar, scatter, counts, mu_hat, var_y)
            latent = _fit_latent(
                schema, pts, z, template,
                replace(controls.latent_opt, seed=controls.latent_opt.seed + it),
                controls.jitter,
            )
            r_n = np.exp(predict_mean(latent, pts))
            spec_k, _, ll_k, res_k, _ = _ml_fit(
                schema, pts, counts, ybar, scatter, mean_const, template,
                replace(controls.refit_opt, seed=controls.refit_opt.seed + it),
                controls.jitter, var_y, fixed_r=r_n, warm=warm,
                compressed=controls.compressed,
            )
            model_k = GPModel(
                schema=schema,
                kernel=spec_k,
                noise=NoiseModel(mode="latent", latent=latent),
                train=data,
                output_index=output_index,
                mean_const=mean_const,
                jitter=controls.jitter,
            )
            history.append({"iteration": float(it), "log_likelihood": ll_k})
            candidates.append((ll_k, model_k))
            warm = res_k.theta
            current = model_k
            if ll_k - prev_ll < controls.tol:
                break
            prev_ll = ll_k

    best_ll, best = max(candidates, key=lambda c: c[0])
    best.diagnostics.update(
        {
            "log_likelihood": best_ll,
            "iterations": len(history) - 1,
            "history": history,
            "noise_mode": best.noise.mode,
        }
    )
    best.factor()  # prime the cache: later predictions must not refactor
    return best


def fit_mogp(
    schema: TaskSchema,
    data: CompressedDataset,
    kernel_spec: KernelSpec | None = None,
    controls: FitControls | None = None,
) -> list[GPModel]:
    """Independent per-output fits sharing the kernel structure.

    Output j uses optimizer seeds offset by j, so a rerun of any single
    column with the same offset reproduces that model exactly.
    """
    controls = controls or FitControls()
    models = []
    for j in range(data.n_outputs):
        cj = replace(
            controls,
            opt=replace(controls.opt, seed=controls.opt.seed + j),
            latent_opt=replace(controls.latent_opt, seed=controls.latent_opt.seed + j),
            refit_opt=replace(controls.refit_opt, seed=controls.refit_opt.seed + j),
        )
        models.append(fit_heteroscedastic(schema, data, kernel_spec, cj, output_index=j))
    return models


# ---------------------------------------------------------------------------
# Persistence


def _component_to_dict(comp: KernelComponent) -> dict[str, Any]:
    out: dict[str, Any] = {"dim": comp.dim, "kind": comp.kind}
    if comp.lengthscale is not None:
        out["lengthscale"] = comp.lengthscale
    if comp.beta is not None:
        out["beta"] = comp.beta
    if comp.c is not None:
        out["c"] = comp.c
    if comp.between is not None:
        out["between"] = [list(row) for row in comp.between]
    return out


def _component_from_dict(obj: Mapping[str, Any]) -> KernelComponent:
    between = obj.get("between")
    return KernelComponent(
        dim=obj["dim"],
        kind=obj["kind"],
        lengthscale=obj.get("lengthscale"),
        beta=obj.get("beta"),
        c=obj.get("c"),
        between=tuple(tuple(float(x) for x in row) for row in between) if between else None,
    )


def _kernel_to_dict(spec: KernelSpec) -> dict[str, Any]:
    return {
        "composition": spec.composition,
        "amplitude": spec.amplitude,
        "components": [_component_to_dict(c) for c in spec.components],
    }


def _kernel_from_dict(obj: Mapping[str, Any]) -> KernelSpec:
    return KernelSpec(
        composition=obj["composition"],
        amplitude=float(obj["amplitude"]),
        components=tuple(_component_from_dict(c) for c in obj["components"]),
    )


def _train_to_dict(train: CompressedDataset) -> dict[str, Any]:
    return {
        "points": [list(p.coords) for p in train.unique_points],
        "counts": train.counts.tolist(),
        "means": train.means.tolist(),
        "sq_dev": train.sq_dev.tolist(),
    }


def _train_from_dict(obj: Mapping[str, Any]) -> CompressedDataset:
    return CompressedDataset(
        unique_points=tuple(TaskPoint(tuple(c)) for c in obj["points"]),
        counts=np.asarray(obj["counts"], dtype=np.int64),
        means=np.asarray(obj["means"], dtype=np.float64),
        sq_dev=np.asarray(obj["sq_dev"], dtype=np.float64),
    )


def _model_to_dict(model: GPModel) -> dict[str, Any]:
    noise: dict[str, Any]
    if model.noise.mode == "constant":
        noise = {"mode": "constant", "variance": model.noise.variance}
    else:
        assert model.noise.latent is not None
        noise = {"mode": "latent", "model": _model_to_dict(model.noise.latent)}
    return {
        "kernel": _kernel_to_dict(model.kernel),
        "noise": noise,
        "train": _train_to_dict(model.train),
        "output_index": model.output_index,
        "mean": model.mean_const,
        "jitter": model.jitter,
        "diagnostics": model.diagnostics,
    }


def _model_from_dict(obj: Mapping[str, Any], schema: TaskSchema) -> GPModel:
    raw = obj["noise"]
    if raw["mode"] == "constant":
        noise = NoiseModel(mode="constant", variance=float(raw["variance"]))
    else:
        noise = NoiseModel(mode="latent", latent=_model_from_dict(raw["model"], schema))
    return GPModel(
        schema=schema,
        kernel=_kernel_from_dict(obj["kernel"]),
        noise=noise,
        train=_train_from_dict(obj["train"]),
        output_index=int(obj.get("output_index", 0)),
        mean_const=float(obj.get("mean", 0.0)),
        jitter=float(obj.get("jitter", 1e-8)),
        diagnostics=obj.get("diagnostics"),
    )


def models_to_dict(models: Sequence[GPModel]) -> dict[str, Any]:
    if not models:
        raise ValueError("no models to save")
    return {
        "format": "gplfd-model",
        "version": 1,
        "schema": schema_to_dict(models[0].schema),
        "outputs": [_model_to_dict(m) for m in models],
    }


def models_from_dict(obj: Mapping[str, Any]) -> list[GPModel]:
    if obj.get("format") != "gplfd-model":
        raise SchemaError("not a model file")
    schema = schema_from_dict(obj["schema"])
    return [_model_from_dict(entry, schema) for entry in obj["outputs"]]


def save_models(path: str, models: Sequence[GPModel]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(models_to_dict(models), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_models(path: str) -> list[GPModel]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    return models_from_dict(obj)
