"""Command-line workflows.

Subcommands cover the whole path from demonstrations to a modulated policy:
``gen-synthetic``, ``align``, ``fit``, ``predict``, ``modulate``,
``evaluate``, ``bench``, and ``pipeline`` (which chains the others from one
config file).  Every command is also available as a plain function, and the
pipeline calls exactly those functions, so chained and standalone runs write
byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import itertools
import json
import math
import os
import sys
from contextlib import nullcontext
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .domain import (
    CATEGORICAL,
    INTEGER,
    Coord,
    DataError,
    Demonstration,
    DemonstrationSet,
    DimSpec,
    SchemaError,
    TaskPoint,
    TaskSchema,
    build_compressed,
    load_demonstrations,
    save_demonstrations,
)
from .gp import (
    FitControls,
    GPModel,
    fit_mogp,
    load_models,
    predict_mogp,
    predict_via_dense,
    save_models,
)
from .hyperopt import OptControl
from .kernels import InfeasibleParameterError, default_kernel_spec
from .modulation import ViaPoint, ViaPointSet, condition, viapoint_distribution
from .preprocess import dtw_align
from .replication import NumericalError, bench_replication


# ---------------------------------------------------------------------------
# Synthetic task families


def mixed3_value(t: float, level: int, shape: str) -> float:
    """Mixed-input benchmark surface: one trajectory family per shape label.

    ``lin`` decays linearly with time and level, ``sin`` oscillates with a
    level-dependent phase, ``dsin`` is a damped oscillation.
    """
    if shape == "lin":
        return -t * level / 20.0
    if shape == "sin":
        return 0.3 * math.sin(math.pi * (5.0 * t - 0.25) - level / 5.0)
    if shape == "dsin":
        return 0.25 * math.sin(math.pi * (3.0 * t - 0.5)) * math.exp(-0.8 * t * level) + 0.1
    raise DataError(f"unknown shape {shape!r}")


def damped_value(t: float) -> float:
    """Damped-oscillation benchmark: a sine under exponential and logistic decay."""
    return math.sin(math.pi * (4.0 * t - 0.25)) * math.exp(-3.0 * t) / (1.0 + math.exp(-5.0 * t))


MIXED3_SHAPES = ("lin", "sin", "dsin")


def mixed3_schema() -> TaskSchema:
    return TaskSchema(
        dims=(
            DimSpec(name="t", kind="real", lo=0.0, hi=1.0),
            DimSpec(name="level", kind="integer", lo=1, hi=5),
            DimSpec(name="shape", kind="categorical", categories=MIXED3_SHAPES),
        ),
        time_dim="t",
    )


def damped_schema() -> TaskSchema:
    return TaskSchema(dims=(DimSpec(name="t", kind="real", lo=0.0, hi=1.0),), time_dim="t")


@dataclass(frozen=True)
class SyntheticSpec:
    """What to generate: family, grid sizes, replication, and noise."""

    family: str
    n_t: int = 25
    n_levels: int = 5
    n_shapes: int = 3
    replicates: int = 1
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.family not in ("mixed3", "damped"):
            raise DataError(f"unknown synthetic family {self.family!r}")
        if self.n_t < 2:
            raise DataError("need at least two timestamps per trajectory")
        if self.replicates < 1:
            raise DataError("need at least one replicate")
        if self.noise < 0.0:
            raise DataError("noise variance must be non-negative")
        if self.family == "mixed3":
            if not 1 <= self.n_levels <= 5:
                raise DataError("mixed3 levels live in {1..5}")
            if not 1 <= self.n_shapes <= 3:
                raise DataError("mixed3 has three shape labels")


def gen_synthetic(spec: SyntheticSpec) -> DemonstrationSet:
    """Deterministic synthetic demonstrations for a given seed."""
    rng = np.random.default_rng(spec.seed)
    t = np.linspace(0.0, 1.0, spec.n_t)
    std = math.sqrt(spec.noise)
    demos: list[Demonstration] = []
    if spec.family == "damped":
        schema = damped_schema()
        truth = np.array([damped_value(tk) for tk in t])
        for r in range(spec.replicates):
            y = truth + std * rng.standard_normal(spec.n_t)
            demos.append(Demonstration(id=f"damped-r{r}", context={}, t=t, y=y[:, None]))
        return DemonstrationSet(schema=schema, demonstrations=tuple(demos))
    schema = mixed3_schema()
    levels = np.unique(np.round(np.linspace(1, 5, spec.n_levels)).astype(int))
    shapes = MIXED3_SHAPES[: spec.n_shapes]
    for level in levels:
        for shape in shapes:
            truth = np.array([mixed3_value(tk, int(level), shape) for tk in t])
            for r in range(spec.replicates):
                y = truth + std * rng.standard_normal(spec.n_t)
                demos.append(
                    Demonstration(
                        id=f"mixed3-level{level}-{shape}-r{r}",
                        context={"level": int(level), "shape": shape},
                        t=t,
                        y=y[:, None],
                    )
                )
    return DemonstrationSet(schema=schema, demonstrations=tuple(demos))


# ---------------------------------------------------------------------------
# Evaluation


def evaluate_r2(
    models: Sequence[GPModel],
    points: Sequence[TaskPoint],
    y_true: np.ndarray,
    compressed: bool = True,
) -> dict[str, Any]:
    """Coefficient of determination of the predictive mean on held-out data."""
    y = np.asarray(y_true, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[1] != len(models):
        raise DataError(f"{len(models)} models but {y.shape[1]} output columns")
    if compressed:
        dist = predict_mogp(models, list(points), full_cov=False)
        mu = dist.mean
    else:
        mu = np.column_stack(
            [predict_via_dense(m, list(points), full_cov=False).mean[:, 0] for m in models]
        )
    per_output: list[float] = []
    for j in range(y.shape[1]):
        denom = float(((y[:, j] - y[:, j].mean()) ** 2).sum())
        if denom <= 0.0:
            raise DataError(f"output {j}: held-out values have no variance")
        per_output.append(1.0 - float(((y[:, j] - mu[:, j]) ** 2).sum()) / denom)
    resid = ((y - mu) ** 2).sum()
    denom = ((y - y.mean(axis=0)) ** 2).sum()
    return {
        "r2_per_output": per_output,
        "r2_pooled": 1.0 - float(resid) / float(denom),
        "n_points": int(y.shape[0]),
    }


# ---------------------------------------------------------------------------
# Grid and via parsing


def _dim_values(dim: DimSpec, text: str) -> list[Coord]:
    if dim.kind == CATEGORICAL:
        labels = list(dim.categories) if text == "*" else text.split("|")
        for lab in labels:
            if lab not in dim.categories:
                raise SchemaError(f"{dim.name}: unknown category {lab!r}")
        return list(labels)
    if dim.kind == INTEGER:
        if "|" in text:
            return [int(v) for v in text.split("|")]
        if ":" in text:
            lo, hi = (int(v) for v in text.split(":", 1))
            return list(range(lo, hi + 1))
        return [int(text)]
    if "|" in text:
        return [float(v) for v in text.split("|")]
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise SchemaError(f"{dim.name}: real ranges are start:stop:count")
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        if count < 1:
            raise SchemaError(f"{dim.name}: range count must be positive")
        return [float(v) for v in np.linspace(start, stop, count)]
    return [float(text)]


def _split_assignments(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise SchemaError(f"expected name=value, got {part!r}")
        name, value = part.split("=", 1)
        out[name.strip()] = value.strip()
    return out


def parse_grid(schema: TaskSchema, text: str) -> list[TaskPoint]:
    """Cartesian query grid from ``name=value`` assignments.

    Real dimensions accept ``start:stop:count``, integers ``lo:hi`` or
    ``a|b|c``, categories a label, ``a|b``, or ``*`` for all.  Every schema
    dimension must be assigned.
    """
    assigned = _split_assignments(text)
    extra = set(assigned) - {d.name for d in schema.dims}
    if extra:
        raise SchemaError(f"grid names unknown dimensions {sorted(extra)}")
    missing = [d.name for d in schema.dims if d.name not in assigned]
    if missing:
        raise SchemaError(f"grid misses dimensions {missing}")
    per_dim = []
    for d in schema.dims:
        vals = _dim_values(d, assigned[d.name])
        if d.kind != CATEGORICAL:
            assert d.lo is not None and d.hi is not None
            for v in vals:
                if not (d.lo <= float(v) <= d.hi):  # type: ignore[arg-type]
                    raise SchemaError(f"{d.name}: value {v} outside [{d.lo}, {d.hi}]")
        per_dim.append(vals)
    return [TaskPoint(tuple(combo)) for combo in itertools.product(*per_dim)]


def parse_via(schema: TaskSchema, texts: Sequence[str], n_outputs: int) -> ViaPointSet:
    """Via points from ``dim=value,...,y=v1|v2,strength=s`` strings."""
    vps: list[ViaPoint] = []
    for text in texts:
        assigned = _split_assignments(text)
        if "y" not in assigned:
            raise SchemaError(f"via point {text!r} misses y=")
        y_vals = [float(v) for v in assigned.pop("y").split("|")]
        if len(y_vals) == 1:
            y_vals = y_vals * n_outputs
        if len(y_vals) != n_outputs:
            raise SchemaError(f"via point needs 1 or {n_outputs} target values")
        s_text = assigned.pop("strength", "1e-6")
        s_vals = [float(v) for v in s_text.split("|")]
        if len(s_vals) == 1:
            s_vals = s_vals * n_outputs
        if len(s_vals) != n_outputs:
            raise SchemaError(f"via point needs 1 or {n_outputs} strengths")
        coords: dict[str, Coord] = {}
        for d in schema.dims:
            if d.name not in assigned:
                raise SchemaError(f"via point misses dimension {d.name!r}")
            raw = assigned.pop(d.name)
            if d.kind == CATEGORICAL:
                coords[d.name] = raw
            elif d.kind == INTEGER:
                coords[d.name] = int(raw)
            else:
                coords[d.name] = float(raw)
        if assigned:
            raise SchemaError(f"via point names unknown dimensions {sorted(assigned)}")
        vps.append(
            ViaPoint(point=schema.point(**coords), y=np.array(y_vals), strength=np.array(s_vals))
        )
    return ViaPointSet(points=tuple(vps))


# ---------------------------------------------------------------------------
# File helpers


def _fmt(v: Any) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path: str, obj: Any) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _prediction_rows(
    schema: TaskSchema, points: Sequence[TaskPoint], mean: np.ndarray, std: np.ndarray
) -> tuple[list[str], list[list[Any]]]:
    n_out = mean.shape[1]
    header = [d.name for d in schema.dims]
    for j in range(n_out):
        header += [f"mean_{j}", f"std_{j}"]
    rows = []
    for i, p in enumerate(points):
        row: list[Any] = list(p.coords)
        for j in range(n_out):
            row += [mean[i, j], std[i, j]]
        rows.append(row)
    return header, rows


# ---------------------------------------------------------------------------
# Command cores (shared by the standalone commands and the pipeline)


def run_gen(cfg: Mapping[str, Any], out_path: str) -> DemonstrationSet:
    spec = SyntheticSpec(
        family=str(cfg.get("family", "damped")),
        n_t=int(cfg.get("n_t", 25)),
        n_levels=int(cfg.get("n_levels", 5)),
        n_shapes=int(cfg.get("n_shapes", 3)),
        replicates=int(cfg.get("replicates", 1)),
        noise=float(cfg.get("noise", 0.0)),
        seed=int(cfg.get("seed", 0)),
    )
    dset = gen_synthetic(spec)
    save_demonstrations(out_path, dset)
    return dset


def run_align(dset: DemonstrationSet, cfg: Mapping[str, Any], out_path: str | None, paths_csv: str | None = None):
    result = dtw_align(
        dset,
        reference=str(cfg.get("reference", "auto")),
        grid_size=int(cfg.get("grid_size", 25)),
    )
    if out_path:
        save_demonstrations(out_path, result.aligned)
    if paths_csv:
        rows = []
        for demo_id in sorted(result.paths):
            for k, l in result.paths[demo_id]:
                rows.append([demo_id, int(k), int(l)])
        write_csv(paths_csv, ["demo_id", "ref_index", "demo_index"], rows)
    return result


def _controls_from_cfg(cfg: Mapping[str, Any], seed: int, compressed: bool) -> FitControls:
    starts = int(cfg.get("starts", 8))
    max_evals = int(cfg.get("max_evals", 500))
    method = str(cfg.get("method", "nelder-mead"))
    opt = OptControl(n_starts=starts, max_evals=max_evals, seed=seed, method=method)
    latent = OptControl(
        n_starts=max(2, starts // 2), max_evals=max_evals, seed=seed, method=method
    )
    refit = OptControl(
        n_starts=max(2, starts // 2), max_evals=max_evals, seed=seed, method=method
    )
    return FitControls(
        heteroscedastic=bool(cfg.get("heteroscedastic", True)),
        max_iter=int(cfg.get("max_iter", 10)),
        tol=float(cfg.get("tol", 1e-4)),
        mean=str(cfg.get("mean", "constant")),
        jitter=float(cfg.get("jitter", 1e-8)),
        compressed=compressed,
        opt=opt,
        latent_opt=latent,
        refit_opt=refit,
    )


def run_fit(
    dset: DemonstrationSet,
    cfg: Mapping[str, Any],
    out_path: str | None,
    seed: int,
    compressed: bool = True,
    trace_csv: str | None = None,
) -> list[GPModel]:
    points, outputs = dset.to_points()
    data = build_compressed(points, outputs)
    spec = default_kernel_spec(
        dset.schema,
        composition=str(cfg.get("composition", "product")),
        real=str(cfg.get("real", "se")),
        integer=str(cfg.get("integer", "cosine")),
        categorical=str(cfg.get("categorical", "cs")),
    )
    controls = _controls_from_cfg(cfg, seed, compressed)
    models = fit_mogp(dset.schema, data, spec, controls)
    if out_path:
        save_models(out_path, models)
    if trace_csv:
        rows = []
        for j, model in enumerate(models):
            for entry in model.diagnostics.get("history", []):
                rows.append([j, int(entry["iteration"]), entry["log_likelihood"]])
        write_csv(trace_csv, ["output", "iteration", "log_likelihood"], rows)
    return models


def run_predict(
    models: Sequence[GPModel],
    grid_text: str,
    out_path: str | None,
    full_cov: bool = False,
    compressed: bool = True,
):
    schema = models[0].schema
    points = parse_grid(schema, grid_text)
    if compressed:
        dist = predict_mogp(models, points, full_cov=full_cov)
    else:
        parts = [predict_via_dense(m, points, full_cov=full_cov) for m in models]
        mean = np.column_stack([p.mean[:, 0] for p in parts])
        var = np.column_stack([p.var[:, 0] for p in parts])
        cov = np.stack([p.cov[0] for p in parts]) if full_cov else None
        from .gp import PredictiveDistribution

        dist = PredictiveDistribution(query=tuple(points), mean=mean, var=var, cov=cov)
    if out_path:
        header, rows = _prediction_rows(schema, points, dist.mean, dist.std())
        write_csv(out_path, header, rows)
    return dist


def run_modulate(
    models: Sequence[GPModel],
    grid_text: str,
    via_texts: Sequence[str],
    out_path: str | None,
    full_cov: bool = True,
    compressed: bool = True,
):
    schema = models[0].schema
    points = parse_grid(schema, grid_text)
    via = parse_via(schema, via_texts, len(models))
    policy = run_predict(models, grid_text, None, full_cov=full_cov, compressed=compressed)
    via_dist = viapoint_distribution(via, models, points, full_cov=full_cov)
    fused = condition(policy, via_dist)
    if out_path:
        header, rows = _prediction_rows(schema, points, fused.mean, fused.std())
        write_csv(out_path, header, rows)
    return fused


def run_evaluate(
    models: Sequence[GPModel],
    test: DemonstrationSet,
    out_path: str | None,
    compressed: bool = True,
) -> dict[str, Any]:
    points, outputs = test.to_points()
    report = evaluate_r2(models, points, outputs, compressed=compressed)
    if out_path:
        _write_json(out_path, report)
    return report


def run_bench(
    n: int, a_values: Sequence[int], repeats: int, seed: int, out_path: str | None
) -> list[dict[str, float]]:
    try:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=1)
    except ImportError:  # pragma: no cover
        limiter = nullcontext()
    with limiter:
        rows = bench_replication(n, a_values, repeats=repeats, seed=seed)
    if out_path:
        header = ["n", "a", "N", "t_dense_ms", "t_compressed_ms", "speedup", "max_abs_diff"]
        table = [[int(r["n"]), int(r["a"]), int(r["N"]), r["t_dense_ms"], r["t_compressed_ms"], r["speedup"], r["max_abs_diff"]] for r in rows]
        write_csv(out_path, header, table)
    return rows


class PipelineError(RuntimeError):
    """A pipeline stage failed; carries the stage name and the cause."""

    def __init__(self, stage: str, cause: BaseException) -> None:
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


def _resolve(base: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base, path)


def run_pipeline(config: Mapping[str, Any], base_dir: str = ".") -> dict[str, Any]:
    """Chain generate/load, align, fit, predict, modulate, evaluate.

    Stage failures re-raise as :class:`PipelineError` tagged with the stage
    name.  The report collects per-stage summaries and is written to
    ``config["report"]`` when set.
    """
    report: dict[str, Any] = {"stages": []}
    seed = int(config.get("seed", 0))
    compressed = bool(config.get("compressed", True))

    dset: DemonstrationSet | None = None
    if "generate" in config:
        stage = "generate"
        try:
            cfg = dict(config["generate"])
            cfg.setdefault("seed", seed)
            out = _resolve(base_dir, cfg.pop("out"))
            dset = run_gen(cfg, out)
            report["stages"].append({"stage": stage, "demonstrations": len(dset.demonstrations), "out": os.path.basename(out)})
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(stage, exc) from exc
    if "input" in config:
        stage = "input"
        try:
            dset = load_demonstrations(_resolve(base_dir, str(config["input"])))
            report["stages"].append({"stage": stage, "demonstrations": len(dset.demonstrations)})
        except Exception as exc:
            raise PipelineError(stage, exc) from exc
    if dset is None:
        raise PipelineError("input", DataError("config needs 'input' or 'generate'"))

    if "align" in config:
        stage = "align"
        try:
            cfg = dict(config["align"])
            out = cfg.pop("out", None)
            paths_csv = cfg.pop("paths_csv", None)
            result = run_align(
                dset,
                cfg,
                _resolve(base_dir, out) if out else None,
                _resolve(base_dir, paths_csv) if paths_csv else None,
            )
            dset = result.aligned
            report["stages"].append({"stage": stage, "reference": result.reference_id})
        except Exception as exc:
            raise PipelineError(stage, exc) from exc

    models: list[GPModel] | None = None
    if "fit" in config:
        stage = "fit"
        try:
            cfg = dict(config["fit"])
            out = cfg.pop("out", None)
            trace = cfg.pop("trace_csv", None)
            fit_seed = int(cfg.pop("seed", seed))
            models = run_fit(
                dset,
                cfg,
                _resolve(base_dir, out) if out else None,
                fit_seed,
                compressed=compressed,
                trace_csv=_resolve(base_dir, trace) if trace else None,
            )
            report["stages"].append(
                {
                    "stage": stage,
                    "outputs": len(models),
                    "log_likelihood": [m.diagnostics.get("log_likelihood") for m in models],
                    "noise_mode": [m.noise.mode for m in models],
                }
            )
        except Exception as exc:
            raise PipelineError(stage, exc) from exc

    if "predict" in config:
        stage = "predict"
        try:
            if models is None:
                raise DataError("predict stage needs a fit stage")
            cfg = dict(config["predict"])
            run_predict(
                models,
                str(cfg["grid"]),
                _resolve(base_dir, cfg["out"]) if "out" in cfg else None,
                full_cov=bool(cfg.get("full_cov", False)),
                compressed=compressed,
            )
            report["stages"].append({"stage": stage, "grid": cfg["grid"]})
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(stage, exc) from exc

    if "modulate" in config:
        stage = "modulate"
        try:
            if models is None:
                raise DataError("modulate stage needs a fit stage")
            cfg = dict(config["modulate"])
            run_modulate(
                models,
                str(cfg["grid"]),
                list(cfg.get("via", [])),
                _resolve(base_dir, cfg["out"]) if "out" in cfg else None,
                full_cov=not bool(cfg.get("diag", False)),
                compressed=compressed,
            )
            report["stages"].append({"stage": stage, "via": list(cfg.get("via", []))})
        except Exception as exc:
            raise PipelineError(stage, exc) from exc

    if "evaluate" in config:
        stage = "evaluate"
        try:
            if models is None:
                raise DataError("evaluate stage needs a fit stage")
            cfg = dict(config["evaluate"])
            test = load_demonstrations(_resolve(base_dir, str(cfg["test"])))
            result = run_evaluate(
                models,
                test,
                _resolve(base_dir, cfg["out"]) if "out" in cfg else None,
                compressed=compressed,
            )
            report["stages"].append({"stage": stage, **result})
        except Exception as exc:
            raise PipelineError(stage, exc) from exc

    if "report" in config:
        _write_json(_resolve(base_dir, str(config["report"])), report)
    return report


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gplfd",
        description="Trajectory policies from demonstrations with mixed-input GPs",
    )
    parser.add_argument("--seed", type=int, default=0, help="base random seed")
    parser.add_argument("--threads", type=int, default=0, help="cap BLAS threads (0 leaves it alone)")
    parser.add_argument(
        "--compressed",
        choices=["true", "false"],
        default="true",
        help="false forces the slow dense-equivalent route, for verification",
    )
    # Global flags are also accepted after the subcommand; SUPPRESS keeps the
    # subparser from clobbering values given before it.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    common.add_argument("--compressed", choices=["true", "false"], default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write synthetic demonstrations", parents=[common])
    p.add_argument("--family", choices=["mixed3", "damped"], default="damped")
    p.add_argument("--n-t", type=int, default=25, help="timestamps per trajectory")
    p.add_argument("--n-levels", type=int, default=5, help="mixed3: integer levels used")
    p.add_argument("--n-shapes", type=int, default=3, help="mixed3: shape labels used")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.0, help="observation noise variance")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("align", help="warp demonstrations onto one timeline", parents=[common])
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--reference", default="auto", help="demonstration id, or auto")
    p.add_argument("--grid-size", type=int, default=25)
    p.add_argument("--paths-csv", default=None, help="also write the warping paths")
    p.set_defaults(func=_cmd_align)

    p = sub.add_parser("fit", help="fit one GP per output channel", parents=[common])
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--composition", choices=["product", "sum", "anova"], default="product")
    p.add_argument("--real", default="se", choices=["se", "matern52", "warped_se", "warped_matern52"])
    p.add_argument("--integer", default="cosine", choices=["cosine", "warped_se", "warped_matern52"])
    p.add_argument("--categorical", default="cs", choices=["cs", "grouped_cs"])
    p.add_argument("--heteroscedastic", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--max-iter", type=int, default=10)
    p.add_argument("--starts", type=int, default=8)
    p.add_argument("--max-evals", type=int, default=500)
    p.add_argument("--method", choices=["nelder-mead", "lbfgsb"], default="nelder-mead")
    p.add_argument("--mean", choices=["constant", "zero"], default="constant")
    p.add_argument("--trace-csv", default=None)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("predict", help="predictive mean and spread on a grid", parents=[common])
    p.add_argument("--model", required=True)
    p.add_argument("--grid", required=True, help="e.g. t=0:1:100,level=3,shape=sin")
    p.add_argument("--out", required=True)
    p.add_argument("--full-cov", action="store_true")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("modulate", help="drag the policy through via points", parents=[common])
    p.add_argument("--model", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--via", action="append", required=True, help="t=...,y=...,strength=...")
    p.add_argument("--out", required=True)
    p.add_argument("--diag", action="store_true", help="marginal fusion instead of joint")
    p.set_defaults(func=_cmd_modulate)

    p = sub.add_parser("evaluate", help="R^2 of a model on held-out demonstrations", parents=[common])
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("bench", help="time dense vs compressed inference", parents=[common])
    p.add_argument("--n", type=int, default=50, help="unique input locations")
    p.add_argument("--a", default="9", help="replicate counts, comma separated")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("pipeline", help="run stages from a JSON config", parents=[common])
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_pipeline)
    return parser


def _cmd_gen(args: argparse.Namespace) -> int:
    cfg = {
        "family": args.family,
        "n_t": args.n_t,
        "n_levels": args.n_levels,
        "n_shapes": args.n_shapes,
        "replicates": args.replicates,
        "noise": args.noise,
        "seed": args.seed,
    }
    dset = run_gen(cfg, args.out)
    print(f"wrote {len(dset.demonstrations)} demonstrations to {args.out}")
    return 0


def _cmd_align(args: argparse.Namespace) -> int:
    dset = load_demonstrations(args.input)
    cfg = {"reference": args.reference, "grid_size": args.grid_size}
    result = run_align(dset, cfg, args.out, args.paths_csv)
    print(f"aligned {len(dset.demonstrations)} demonstrations onto {result.reference_id}")
    return 0


def _cmd_fit(args: argparse.Namespace) -> int:
    dset = load_demonstrations(args.input)
    cfg = {
        "composition": args.composition,
        "real": args.real,
        "integer": args.integer,
        "categorical": args.categorical,
        "heteroscedastic": args.heteroscedastic,
        "max_iter": args.max_iter,
        "starts": args.starts,
        "max_evals": args.max_evals,
        "method": args.method,
        "mean": args.mean,
    }
    models = run_fit(
        dset, cfg, args.out, args.seed,
        compressed=args.compressed == "true",
        trace_csv=args.trace_csv,
    )
    lls = ", ".join(f"{m.diagnostics.get('log_likelihood', float('nan')):.4f}" for m in models)
    print(f"fit {len(models)} output(s); log likelihood {lls}; model at {args.out}")
    return 0


def _cmd_predict(args: argparse.Namespace) -> int:
    models = load_models(args.model)
    run_predict(
        models, args.grid, args.out,
        full_cov=args.full_cov,
        compressed=args.compressed == "true",
    )
    print(f"wrote predictions to {args.out}")
    return 0


def _cmd_modulate(args: argparse.Namespace) -> int:
    models = load_models(args.model)
    run_modulate(
        models, args.grid, args.via, args.out,
        full_cov=not args.diag,
        compressed=args.compressed == "true",
    )
    print(f"wrote modulated predictions to {args.out}")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    models = load_models(args.model)
    test = load_demonstrations(args.test)
    report = run_evaluate(models, test, args.out, compressed=args.compressed == "true")
    print(json.dumps(report, sort_keys=True))
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    a_values = [int(v) for v in str(args.a).split(",") if v]
    rows = run_bench(args.n, a_values, args.repeats, args.seed, args.out)
    for r in rows:
        print(
            f"n={int(r['n'])} a={int(r['a'])} N={int(r['N'])} "
            f"dense={r['t_dense_ms']:.3f}ms compressed={r['t_compressed_ms']:.3f}ms "
            f"speedup={r['speedup']:.1f} max_abs_diff={r['max_abs_diff']:.3g}"
        )
    return 0


def _cmd_pipeline(args: argparse.Namespace) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        try:
            config = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{args.config}: invalid JSON ({exc})") from exc
    base_dir = os.path.dirname(os.path.abspath(args.config))
    report = run_pipeline(config, base_dir)
    print(json.dumps(report, sort_keys=True))
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads > 0:
        try:
            from threadpoolctl import threadpool_limits

            limiter = threadpool_limits(limits=args.threads)
        except ImportError:  # pragma: no cover
            limiter = nullcontext()
    else:
        limiter = nullcontext()
    try:
        with limiter:
            return int(args.func(args))
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.cause, (NumericalError, InfeasibleParameterError)):
            return 4
        return 3
    except (SchemaError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, InfeasibleParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
