"""Typed task variables, demonstration sets, and replication statistics.

A task schema declares one time dimension plus any number of context
dimensions (real, integer, or categorical).  Demonstrations are sampled
trajectories tagged with a context; flattening a demonstration set yields
(task point, output) pairs, and repeated task points are compressed into
per-location counts, means, and squared deviations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

Coord = float | int | str

REAL = "real"
INTEGER = "integer"
CATEGORICAL = "categorical"
_KINDS = (REAL, INTEGER, CATEGORICAL)


class SchemaError(ValueError):
    """Data or parameters disagree with the declared task schema."""


class DataError(ValueError):
    """Structurally valid input that cannot be used."""


class DegenerateDataError(DataError):
    """Training outputs carry no variance."""


class DegenerateTrajectoryError(DataError):
    """Trajectory has zero total path length."""


@dataclass(frozen=True, slots=True)
class DimSpec:
    """One task dimension.

    Parameters
    ----------
    name : str
        Unique dimension name.
    kind : str
        One of ``"real"``, ``"integer"``, ``"categorical"``.
    lo, hi : float or int, optional
        Inclusive bounds for real and integer dimensions.
    categories : tuple of str
        Ordered labels for categorical dimensions.
    groups : tuple of str, optional
        Group label per category, parallel to ``categories``.
    """

    name: str
    kind: str
    lo: float | None = None
    hi: float | None = None
    categories: tuple[str, ...] = ()
    groups: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise SchemaError("dimension name must be non-empty")
        if self.kind not in _KINDS:
            raise SchemaError(f"unknown dimension kind {self.kind!r}")
        if self.kind in (REAL, INTEGER):
            if self.lo is None or self.hi is None:
                raise SchemaError(f"dimension {self.name!r} needs lo and hi bounds")
            if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
                raise SchemaError(f"dimension {self.name!r} has non-finite bounds")
            if self.lo > self.hi:
                raise SchemaError(f"dimension {self.name!r} has lo > hi")
            if self.kind == INTEGER and (self.lo != int(self.lo) or self.hi != int(self.hi)):
                raise SchemaError(f"dimension {self.name!r} has non-integer bounds")
            if self.categories:
                raise SchemaError(f"dimension {self.name!r} does not take categories")
        else:
            if len(self.categories) < 1:
                raise SchemaError(f"dimension {self.name!r} needs at least one category")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"dimension {self.name!r} repeats a category label")
            if self.groups is not None and len(self.groups) != len(self.categories):
                raise SchemaError(f"dimension {self.name!r}: groups must cover every category")

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    def category_index(self, label: str) -> int:
        try:
            return self.categories.index(label)
        except ValueError:
            raise SchemaError(f"unknown category {label!r} for dimension {self.name!r}") from None

    def group_labels(self) -> tuple[str, ...]:
        """Distinct group labels in first-appearance order."""
        if self.groups is None:
            raise SchemaError(f"dimension {self.name!r} declares no groups")
        seen: list[str] = []
        for g in self.groups:
            if g not in seen:
                seen.append(g)
        return tuple(seen)

    def group_index_per_category(self) -> np.ndarray:
        labels = self.group_labels()
        pos = {g: i for i, g in enumerate(labels)}
        assert self.groups is not None
        return np.array([pos[g] for g in self.groups], dtype=np.intp)

    @property
    def span(self) -> float:
        if self.kind == CATEGORICAL:
            raise SchemaError(f"dimension {self.name!r} has no numeric span")
        assert self.lo is not None and self.hi is not None
        return float(self.hi - self.lo)


@dataclass(frozen=True, slots=True)
class TaskSchema:
    """Ordered dimensions plus the name of the time dimension."""

    dims: tuple[DimSpec, ...]
    time_dim: str = ""

    def __post_init__(self) -> None:
        if not self.dims:
            raise SchemaError("schema needs at least one dimension")
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise SchemaError("dimension names must be unique")
        time = self.time_dim
        if not time:
            for d in self.dims:
                if d.kind == REAL:
                    time = d.name
                    break
            else:
                raise SchemaError("schema has no real dimension to use as time")
            object.__setattr__(self, "time_dim", time)
        if time not in names:
            raise SchemaError(f"time dimension {time!r} is not declared")
        if self.dim(time).kind != REAL:
            raise SchemaError(f"time dimension {time!r} must be real")

    def dim(self, name: str) -> DimSpec:
        for d in self.dims:
            if d.name == name:
                return d
        raise SchemaError(f"unknown dimension {name!r}")

    def index_of(self, name: str) -> int:
        for i, d in enumerate(self.dims):
            if d.name == name:
                return i
        raise SchemaError(f"unknown dimension {name!r}")

    @property
    def time_index(self) -> int:
        return self.index_of(self.time_dim)

    @property
    def context_dims(self) -> tuple[DimSpec, ...]:
        return tuple(d for d in self.dims if d.name != self.time_dim)

    def point(self, **coords: Coord) -> "TaskPoint":
        """Build a task point from named coordinates, validating as it goes."""
        extra = set(coords) - {d.name for d in self.dims}
        if extra:
            raise SchemaError(f"unknown dimensions {sorted(extra)}")
        missing = [d.name for d in self.dims if d.name not in coords]
        if missing:
            raise SchemaError(f"missing coordinates for {missing}")
        p = TaskPoint(tuple(coords[d.name] for d in self.dims))
        problems = validate_point(self, p)
        if problems:
            raise SchemaError("; ".join(problems))
        return p

    def encode(self, points: Sequence["TaskPoint"]) -> np.ndarray:
        """Map task points to a float matrix; category labels become indices."""
        m = len(points)
        out = np.empty((m, len(self.dims)), dtype=np.float64)
        for j, d in enumerate(self.dims):
            if d.kind == CATEGORICAL:
                lut = {label: float(i) for i, label in enumerate(d.categories)}
                for i, p in enumerate(points):
                    out[i, j] = lut[p.coords[j]]  # type: ignore[index]
            else:
                for i, p in enumerate(points):
                    out[i, j] = float(p.coords[j])  # type: ignore[arg-type]
        return out


@dataclass(frozen=True, slots=True)
class TaskPoint:
    """One input location: a coordinate per schema dimension, in order."""

    coords: tuple[Coord, ...]


def validate_point(schema: TaskSchema, point: TaskPoint) -> list[str]:
    """Return a list of violations; empty means the point fits the schema."""
    problems: list[str] = []
    if len(point.coords) != len(schema.dims):
        return [f"expected {len(schema.dims)} coordinates, got {len(point.coords)}"]
    for d, v in zip(schema.dims, point.coords):
        if d.kind == CATEGORICAL:
            if not isinstance(v, str):
                problems.append(f"{d.name}: expected a category label, got {v!r}")
            elif v not in d.categories:
                problems.append(f"{d.name}: unknown category {v!r}")
            continue
        if isinstance(v, bool) or isinstance(v, str):
            problems.append(f"{d.name}: expected a number, got {v!r}")
            continue
        x = float(v)
        if not np.isfinite(x):
            problems.append(f"{d.name}: non-finite value")
            continue
        if d.kind == INTEGER and x != int(x):
            problems.append(f"{d.name}: expected an integer, got {v!r}")
            continue
        assert d.lo is not None and d.hi is not None
        if not (d.lo <= x <= d.hi):
            problems.append(f"{d.name}: value {v!r} outside [{d.lo}, {d.hi}]")
    return problems


@dataclass(frozen=True)
class Demonstration:
    """A sampled trajectory with its task context.

    ``t`` is strictly increasing with at least two samples; ``y`` has one row
    per sample and one column per output.
    """

    id: str
    context: Mapping[str, Coord]
    t: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.t, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if t.ndim != 1 or t.size < 2:
            raise DataError(f"demonstration {self.id!r}: need at least two samples")
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(y)):
            raise DataError(f"demonstration {self.id!r}: non-finite samples")
        if np.any(np.diff(t) <= 0):
            raise DataError(f"demonstration {self.id!r}: timestamps must strictly increase")
        if y.shape[0] != t.size:
            raise DataError(f"demonstration {self.id!r}: outputs do not match timestamps")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)

    @property
    def n_samples(self) -> int:
        return int(self.t.size)

    @property
    def n_outputs(self) -> int:
        return int(self.y.shape[1])

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])


@dataclass(frozen=True)
class DemonstrationSet:
    """Demonstrations sharing one schema and one output layout."""

    schema: TaskSchema
    demonstrations: tuple[Demonstration, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "demonstrations", tuple(self.demonstrations))
        if not self.demonstrations:
            raise DataError("demonstration set is empty")
        ids = [d.id for d in self.demonstrations]
        if len(set(ids)) != len(ids):
            raise DataError("demonstration ids must be unique")
        want = {d.name for d in self.schema.context_dims}
        n_out = self.demonstrations[0].n_outputs
        for demo in self.demonstrations:
            have = set(demo.context)
            if have != want:
                raise SchemaError(
                    f"demonstration {demo.id!r}: context keys {sorted(have)} "
                    f"do not match schema {sorted(want)}"
                )
            if demo.n_outputs != n_out:
                raise DataError(f"demonstration {demo.id!r}: inconsistent output count")

    @property
    def n_outputs(self) -> int:
        return self.demonstrations[0].n_outputs

    def validate(self) -> list[str]:
        """Domain check every sample location; returns violations."""
        problems: list[str] = []
        for demo in self.demonstrations:
            for point in self.iter_points(demo):
                for msg in validate_point(self.schema, point):
                    problems.append(f"{demo.id}: {msg}")
                break  # context repeats along the trajectory; check once
            tdim = self.schema.dim(self.schema.time_dim)
            assert tdim.lo is not None and tdim.hi is not None
            if demo.t[0] < tdim.lo or demo.t[-1] > tdim.hi:
                problems.append(f"{demo.id}: timestamps leave [{tdim.lo}, {tdim.hi}]")
        return problems

    def iter_points(self, demo: Demonstration) -> Iterable[TaskPoint]:
        ti = self.schema.time_index
        ctx = [
            (j, demo.context[d.name])
            for j, d in enumerate(self.schema.dims)
            if j != ti
        ]
        template: list[Coord] = [0.0] * len(self.schema.dims)
        for j, v in ctx:
            template[j] = v
        for tk in demo.t:
            template[ti] = float(tk)
            yield TaskPoint(tuple(template))

    def to_points(self) -> tuple[list[TaskPoint], np.ndarray]:
        """Flatten all demonstrations into (points, outputs) training pairs."""
        points: list[TaskPoint] = []
        rows: list[np.ndarray] = []
        for demo in self.demonstrations:
            points.extend(self.iter_points(demo))
            rows.append(demo.y)
        return points, np.vstack(rows)


@dataclass(frozen=True)
class CompressedDataset:
    """Replication statistics: one row per unique task point.

    ``counts[i]`` observations fell on ``unique_points[i]``; ``means`` holds
    their per-output averages and ``sq_dev`` the per-output sums of squared
    deviations from those averages.
    """

    unique_points: tuple[TaskPoint, ...]
    counts: np.ndarray
    means: np.ndarray
    sq_dev: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        sq_dev = np.atleast_2d(np.asarray(self.sq_dev, dtype=np.float64))
        n = len(self.unique_points)
        if counts.shape != (n,) or means.shape[0] != n or sq_dev.shape != means.shape:
            raise DataError("compressed dataset shapes disagree")
        if n == 0:
            raise DataError("compressed dataset is empty")
        if np.any(counts < 1):
            raise DataError("every unique point needs at least one observation")
        if np.any(sq_dev < 0):
            raise DataError("squared deviations must be non-negative")
        object.__setattr__(self, "unique_points", tuple(self.unique_points))
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "sq_dev", sq_dev)

    @property
    def n(self) -> int:
        return len(self.unique_points)

    @property
    def n_outputs(self) -> int:
        return int(self.means.shape[1])

    @property
    def total_count(self) -> int:
        return int(self.counts.sum())

    def output_variance(self, output_index: int) -> float:
        """Variance of the expanded output column, exactly from the statistics."""
        yb = self.means[:, output_index]
        a = self.counts.astype(np.float64)
        n_total = a.sum()
        grand = float(a @ yb) / n_total
        ss = float(self.sq_dev[:, output_index].sum() + a @ (yb - grand) ** 2)
        return ss / n_total


def build_compressed(points: Sequence[TaskPoint], outputs: np.ndarray) -> CompressedDataset:
    """Group repeated task points and reduce their outputs.

    Points compare by exact coordinate equality.  Unique points keep
    first-appearance order.
    """
    y = np.asarray(outputs, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if len(points) != y.shape[0]:
        raise DataError(f"{len(points)} points but {y.shape[0]} output rows")
    if len(points) == 0:
        raise DataError("no points to compress")
    order: list[TaskPoint] = []
    groups: dict[TaskPoint, list[int]] = {}
    for i, p in enumerate(points):
        if p not in groups:
            groups[p] = []
            order.append(p)
        groups[p].append(i)
    n = len(order)
    counts = np.empty(n, dtype=np.int64)
    means = np.empty((n, y.shape[1]), dtype=np.float64)
    sq_dev = np.empty((n, y.shape[1]), dtype=np.float64)
    for i, p in enumerate(order):
        rows = y[groups[p]]
        counts[i] = rows.shape[0]
        mu = rows.mean(axis=0)
        means[i] = mu
        sq_dev[i] = ((rows - mu) ** 2).sum(axis=0)
    return CompressedDataset(tuple(order), counts, means, sq_dev)


# ---------------------------------------------------------------------------
# JSON input/output


def schema_to_dict(schema: TaskSchema) -> dict[str, Any]:
    dims = []
    for d in schema.dims:
        entry: dict[str, Any] = {"name": d.name, "kind": d.kind}
        if d.kind == CATEGORICAL:
            entry["domain"] = list(d.categories)
            if d.groups is not None:
                entry["groups"] = {c: g for c, g in zip(d.categories, d.groups)}
        else:
            lo, hi = d.lo, d.hi
            if d.kind == INTEGER:
                entry["domain"] = [int(lo), int(hi)]  # type: ignore[arg-type]
            else:
                entry["domain"] = [float(lo), float(hi)]  # type: ignore[arg-type]
        dims.append(entry)
    return {"dims": dims, "time": schema.time_dim}


def schema_from_dict(obj: Mapping[str, Any]) -> TaskSchema:
    try:
        raw_dims = obj["dims"]
    except (KeyError, TypeError):
        raise SchemaError("schema needs a 'dims' list") from None
    dims = []
    for entry in raw_dims:
        name = entry.get("name")
        kind = entry.get("kind")
        domain = entry.get("domain")
        if name is None or kind is None or domain is None:
            raise SchemaError("each dimension needs name, kind, and domain")
        if kind == CATEGORICAL:
            categories = tuple(str(c) for c in domain)
            groups = None
            if "groups" in entry:
                mapping = entry["groups"]
                missing = [c for c in categories if c not in mapping]
                if missing:
                    raise SchemaError(f"dimension {name!r}: no group for {missing}")
                groups = tuple(str(mapping[c]) for c in categories)
            dims.append(DimSpec(name=name, kind=kind, categories=categories, groups=groups))
        elif kind in (REAL, INTEGER):
            if len(domain) != 2:
                raise SchemaError(f"dimension {name!r}: domain must be [lo, hi]")
            dims.append(DimSpec(name=name, kind=kind, lo=domain[0], hi=domain[1]))
        else:
            raise SchemaError(f"unknown dimension kind {kind!r}")
    return TaskSchema(dims=tuple(dims), time_dim=str(obj.get("time", "")))


def demonstrations_to_dict(dset: DemonstrationSet) -> dict[str, Any]:
    demos = []
    for demo in dset.demonstrations:
        samples = np.column_stack([demo.t, demo.y])
        demos.append(
            {
                "id": demo.id,
                "context": dict(demo.context),
                "samples": samples.tolist(),
            }
        )
    return {"schema": schema_to_dict(dset.schema), "demonstrations": demos}


def demonstrations_from_dict(obj: Mapping[str, Any]) -> DemonstrationSet:
    if "schema" not in obj or "demonstrations" not in obj:
        raise SchemaError("expected top-level 'schema' and 'demonstrations'")
    schema = schema_from_dict(obj["schema"])
    demos = []
    for k, entry in enumerate(obj["demonstrations"]):
        demo_id = str(entry.get("id", f"demo-{k}"))
        raw_ctx = entry.get("context", {})
        context: dict[str, Coord] = {}
        for name, value in raw_ctx.items():
            d = schema.dim(name)
            if d.kind == INTEGER:
                if not isinstance(value, (int, float)) or isinstance(value, bool) or value != int(value):
                    raise SchemaError(f"demonstration {demo_id!r}: {name} must be an integer")
                context[name] = int(value)
            elif d.kind == REAL:
                context[name] = float(value)
            else:
                context[name] = str(value)
        samples = np.asarray(entry.get("samples", []), dtype=np.float64)
        if samples.ndim != 2 or samples.shape[1] < 2:
            raise DataError(f"demonstration {demo_id!r}: samples must be rows of [t, y...]")
        demos.append(Demonstration(id=demo_id, context=context, t=samples[:, 0], y=samples[:, 1:]))
    dset = DemonstrationSet(schema=schema, demonstrations=tuple(demos))
    problems = dset.validate()
    if problems:
        raise SchemaError("; ".join(problems[:10]))
    return dset


def save_demonstrations(path: str, dset: DemonstrationSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(demonstrations_to_dict(dset), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_demonstrations(path: str) -> DemonstrationSet:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from exc
    return demonstrations_from_dict(obj)
