"""Covariance functions over mixed real, integer, and categorical inputs.

Each schema dimension gets one correlation-form component; components are
combined by product, sum, or ANOVA (product of one-plus terms) and scaled by
a single amplitude.  Scalar evaluation (:func:`compose`) and matrix assembly
(:func:`gram`, :func:`cross_gram`) are independent code paths on purpose:
tests hold them against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .domain import CATEGORICAL, INTEGER, REAL, DimSpec, SchemaError, TaskPoint, TaskSchema

PRODUCT = "product"
SUM = "sum"
ANOVA = "anova"
_COMPOSITIONS = (PRODUCT, SUM, ANOVA)

_EIG_TOL = 1e-9


class InfeasibleParameterError(ValueError):
    """Kernel parameters leave the positive-semidefinite region."""


# ---------------------------------------------------------------------------
# Scalar components


def k_se(tau: float, lengthscale: float) -> float:
    """Squared-exponential correlation of a lag."""
    if lengthscale <= 0.0:
        raise InfeasibleParameterError("lengthscale must be positive")
    return math.exp(-(tau * tau) / (2.0 * lengthscale * lengthscale))


def k_matern52(tau: float, lengthscale: float) -> float:
    """Matern correlation with smoothness 5/2."""
    if lengthscale <= 0.0:
        raise InfeasibleParameterError("lengthscale must be positive")
    u = math.sqrt(5.0) * abs(tau) / lengthscale
    return (1.0 + u + u * u / 3.0) * math.exp(-u)


def linear_int_warp(lo: int, hi: int, beta: float) -> Callable[[float], float]:
    """Order-preserving map of ``{lo..hi}`` into ``[0, beta)``.

    The denominator counts one period slot past the last level, so the first
    and last levels never meet even at ``beta = pi``.
    """
    width = float(hi - lo + 1)

    def warp(s: float) -> float:
        return beta * (float(s) - lo) / width

    return warp


def k_int_cosine(s: float, s_prime: float, warp: Callable[[float], float], beta: float) -> float:
    """Cosine correlation between two integer levels under a warp."""
    if not (0.0 < beta <= math.pi):
        raise InfeasibleParameterError(f"beta must lie in (0, pi], got {beta}")
    return math.cos(warp(s) - warp(s_prime))


def cs_feasible_interval(n_categories: int) -> tuple[float, float]:
    """Open interval of off-diagonal correlations keeping compound symmetry PD."""
    if n_categories < 2:
        raise SchemaError("compound symmetry needs at least two categories")
    return (-1.0 / (n_categories - 1), 1.0)


def k_cat_cs(u: str, u_prime: str, c: float, n_categories: int) -> float:
    """Compound-symmetry correlation: 1 on the diagonal, ``c`` off it."""
    lo, hi = cs_feasible_interval(n_categories)
    if not (lo < c < hi):
        raise InfeasibleParameterError(
            f"compound-symmetry correlation {c} outside ({lo}, {hi}) for {n_categories} categories"
        )
    return 1.0 if u == u_prime else c


def cs_matrix(n_categories: int, c: float) -> np.ndarray:
    """Raw compound-symmetry matrix, no feasibility check.

    Useful for probing the boundary of the feasible region.
    """
    L = n_categories
    return (1.0 - c) * np.eye(L) + c * np.ones((L, L))


def grouped_cs_matrix(dim: DimSpec, between: np.ndarray) -> np.ndarray:
    """Category-by-category correlation from a group-level matrix.

    ``between[g, g]`` is the within-group correlation and ``between[g, g']``
    the between-group one; same category is always 1.
    """
    gidx = dim.group_index_per_category()
    C = np.asarray(between, dtype=np.float64)[np.ix_(gidx, gidx)].copy()
    np.fill_diagonal(C, 1.0)
    return C


def k_cat_grouped(u: str, u_prime: str, dim: DimSpec, between: np.ndarray) -> float:
    """Grouped compound symmetry: own level, own group, or across groups."""
    if u == u_prime:
        return 1.0
    gidx = dim.group_index_per_category()
    g = gidx[dim.category_index(u)]
    g2 = gidx[dim.category_index(u_prime)]
    return float(np.asarray(between, dtype=np.float64)[g, g2])


def validate_grouped_cs(group_sizes: Sequence[int], between: np.ndarray, dim_name: str = "") -> None:
    """Check the sufficient positive-semidefiniteness conditions.

    Three blocks must be PSD: each within-group matrix, each within-group
    matrix minus its mean times the all-ones matrix, and the group-level
    matrix of block averages.  Raises with the failing block named.
    """
    B = np.asarray(between, dtype=np.float64)
    G = len(group_sizes)
    where = f" (dimension {dim_name!r})" if dim_name else ""
    if B.shape != (G, G):
        raise InfeasibleParameterError(f"between-group matrix must be {G}x{G}{where}")
    if not np.allclose(B, B.T, atol=1e-12):
        raise InfeasibleParameterError(f"between-group matrix must be symmetric{where}")
    bstar = np.empty((G, G), dtype=np.float64)
    for g, (L, cgg) in enumerate(zip(group_sizes, np.diag(B))):
        W = cs_matrix(L, cgg)
        if np.linalg.eigvalsh(W).min() < -_EIG_TOL:
            raise InfeasibleParameterError(
                f"within-group block {g} is not positive semidefinite{where}"
            )
        wbar = W.mean()
        centred = W - wbar * np.ones((L, L))
        if np.linalg.eigvalsh(centred).min() < -_EIG_TOL:
            raise InfeasibleParameterError(
                f"within-group block {g} minus its average is not positive semidefinite{where}"
            )
        bstar[g, g] = wbar
    for g in range(G):
        for g2 in range(G):
            if g != g2:
                bstar[g, g2] = B[g, g2]
    if np.linalg.eigvalsh(bstar).min() < -_EIG_TOL:
        raise InfeasibleParameterError(
            f"between-group average matrix is not positive semidefinite{where}"
        )


# ---------------------------------------------------------------------------
# Kernel specifications

SE = "se"
MATERN52 = "matern52"
COSINE = "cosine"
WARPED_SE = "warped_se"
WARPED_MATERN52 = "warped_matern52"
CS = "cs"
GROUPED_CS = "grouped_cs"

_NUMERIC_KINDS = (SE, MATERN52, WARPED_SE, WARPED_MATERN52)


@dataclass(frozen=True)
class KernelComponent:
    """Correlation component tied to one schema dimension.

    Exactly the parameters for its kind are set: ``lengthscale`` for se,
    matern52, and the warped variants; ``beta`` for cosine; ``c`` for cs;
    ``between`` (a symmetric group-level matrix as nested tuples) for
    grouped_cs.
    """

    dim: str
    kind: str
    lengthscale: float | None = None
    beta: float | None = None
    c: float | None = None
    between: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self) -> None:
        if self.kind in _NUMERIC_KINDS:
            if self.lengthscale is None or self.lengthscale <= 0.0:
                raise InfeasibleParameterError(f"component {self.dim!r}: lengthscale must be positive")
        elif self.kind == COSINE:
            if self.beta is None or not (0.0 < self.beta <= math.pi):
                raise InfeasibleParameterError(f"component {self.dim!r}: beta must lie in (0, pi]")
        elif self.kind == CS:
            if self.c is None:
                raise InfeasibleParameterError(f"component {self.dim!r}: missing correlation c")
        elif self.kind == GROUPED_CS:
            if self.between is None:
                raise InfeasibleParameterError(f"component {self.dim!r}: missing between-group matrix")
        else:
            raise SchemaError(f"unknown kernel component kind {self.kind!r}")

    def between_matrix(self) -> np.ndarray:
        assert self.between is not None
        return np.asarray(self.between, dtype=np.float64)


@dataclass(frozen=True)
class KernelSpec:
    """Composition rule, global amplitude, and one component per dimension."""

    composition: str
    amplitude: float
    components: tuple[KernelComponent, ...]

    def __post_init__(self) -> None:
        if self.composition not in _COMPOSITIONS:
            raise SchemaError(f"unknown composition {self.composition!r}")
        if self.amplitude <= 0.0 or not np.isfinite(self.amplitude):
            raise InfeasibleParameterError("amplitude must be positive and finite")
        names = [c.dim for c in self.components]
        if len(set(names)) != len(names):
            raise SchemaError("one component per dimension")

    def component(self, dim: str) -> KernelComponent:
        for c in self.components:
            if c.dim == dim:
                return c
        raise SchemaError(f"no component for dimension {dim!r}")

    def validate(self, schema: TaskSchema) -> None:
        """Check component/dimension pairing and parameter feasibility."""
        covered = {c.dim for c in self.components}
        declared = {d.name for d in schema.dims}
        if covered != declared:
            raise SchemaError(
                f"components cover {sorted(covered)} but schema declares {sorted(declared)}"
            )
        for comp in self.components:
            d = schema.dim(comp.dim)
            if comp.kind in (SE, MATERN52) and d.kind != REAL:
                raise SchemaError(f"component {comp.dim!r}: stationary kernel needs a real dimension")
            if comp.kind in (WARPED_SE, WARPED_MATERN52) and d.kind != INTEGER:
                raise SchemaError(f"component {comp.dim!r}: warped kernel needs an integer dimension")
            if comp.kind == COSINE and d.kind != INTEGER:
                raise SchemaError(f"component {comp.dim!r}: cosine kernel needs an integer dimension")
            if comp.kind in (CS, GROUPED_CS) and d.kind != CATEGORICAL:
                raise SchemaError(f"component {comp.dim!r}: category kernel on a numeric dimension")
            if comp.kind == CS:
                lo, hi = cs_feasible_interval(d.n_categories)
                assert comp.c is not None
                if not (lo < comp.c < hi):
                    raise InfeasibleParameterError(
                        f"component {comp.dim!r}: correlation {comp.c} outside ({lo}, {hi})"
                    )
            if comp.kind == GROUPED_CS:
                sizes = np.bincount(d.group_index_per_category()).tolist()
                validate_grouped_cs(sizes, comp.between_matrix(), dim_name=d.name)


def default_kernel_spec(
    schema: TaskSchema,
    composition: str = PRODUCT,
    real: str = SE,
    integer: str = COSINE,
    categorical: str = CS,
) -> KernelSpec:
    """Neutral starting spec: one component per dimension by kind."""
    comps: list[KernelComponent] = []
    for d in schema.dims:
        if d.kind == REAL:
            comps.append(KernelComponent(dim=d.name, kind=real, lengthscale=max(0.3 * d.span, 1e-2)))
        elif d.kind == INTEGER:
            if integer == COSINE:
                comps.append(KernelComponent(dim=d.name, kind=integer, beta=math.pi / 2))
            else:
                comps.append(KernelComponent(dim=d.name, kind=integer, lengthscale=0.3))
        else:
            # declared groups override the plain-CS default for this dimension
            if d.groups is not None and categorical in (CS, GROUPED_CS):
                G = len(d.group_labels())
                between = tuple(
                    tuple(0.1 if g != g2 else 0.3 for g2 in range(G)) for g in range(G)
                )
                comps.append(KernelComponent(dim=d.name, kind=GROUPED_CS, between=between))
            else:
                lo, hi = cs_feasible_interval(max(d.n_categories, 2))
                comps.append(KernelComponent(dim=d.name, kind=CS, c=lo + 0.5 * (hi - lo)))
    return KernelSpec(composition=composition, amplitude=1.0, components=tuple(comps))


# ---------------------------------------------------------------------------
# Scalar evaluation


def component_scalar(comp: KernelComponent, dim: DimSpec, v: float | str, w: float | str) -> float:
    if comp.kind == SE:
        return k_se(float(v) - float(w), comp.lengthscale)  # type: ignore[arg-type]
    if comp.kind == MATERN52:
        return k_matern52(float(v) - float(w), comp.lengthscale)  # type: ignore[arg-type]
    if comp.kind in (WARPED_SE, WARPED_MATERN52):
        span = dim.span if dim.span > 0 else 1.0
        assert dim.lo is not None
        a = (float(v) - dim.lo) / span  # type: ignore[arg-type]
        b = (float(w) - dim.lo) / span  # type: ignore[arg-type]
        base = k_se if comp.kind == WARPED_SE else k_matern52
        return base(a - b, comp.lengthscale)  # type: ignore[arg-type]
    if comp.kind == COSINE:
        assert comp.beta is not None and dim.lo is not None and dim.hi is not None
        warp = linear_int_warp(int(dim.lo), int(dim.hi), comp.beta)
        return k_int_cosine(float(v), float(w), warp, comp.beta)  # type: ignore[arg-type]
    if comp.kind == CS:
        assert comp.c is not None
        return k_cat_cs(str(v), str(w), comp.c, dim.n_categories)
    if comp.kind == GROUPED_CS:
        return k_cat_grouped(str(v), str(w), dim, comp.between_matrix())
    raise SchemaError(f"unknown kernel component kind {comp.kind!r}")


def compose(spec: KernelSpec, schema: TaskSchema, x: TaskPoint, x_prime: TaskPoint) -> float:
    """Scalar covariance between two task points (no jitter)."""
    vals = []
    for comp in spec.components:
        j = schema.index_of(comp.dim)
        vals.append(component_scalar(comp, schema.dims[j], x.coords[j], x_prime.coords[j]))
    if spec.composition == PRODUCT:
        combined = math.prod(vals)
    elif spec.composition == SUM:
        combined = sum(vals)
    else:
        combined = math.prod(1.0 + v for v in vals)
    return spec.amplitude * combined


# ---------------------------------------------------------------------------
# Matrix assembly (vectorised route)


def _component_corr(comp: KernelComponent, dim: DimSpec, col_a: np.ndarray, col_b: np.ndarray) -> np.ndarray:
    if comp.kind in (SE, MATERN52, WARPED_SE, WARPED_MATERN52):
        a, b = col_a, col_b
        if comp.kind in (WARPED_SE, WARPED_MATERN52):
            span = dim.span if dim.span > 0 else 1.0
            a = (a - dim.lo) / span
            b = (b - dim.lo) / span
        tau = np.abs(a[:, None] - b[None, :])
        ell = comp.lengthscale
        assert ell is not None
        if comp.kind in (SE, WARPED_SE):
            return np.exp(-0.5 * (tau / ell) ** 2)
        u = math.sqrt(5.0) * tau / ell
        return (1.0 + u + u * u / 3.0) * np.exp(-u)
    if comp.kind == COSINE:
        assert comp.beta is not None and dim.lo is not None
        if not (0.0 < comp.beta <= math.pi):
            raise InfeasibleParameterError(f"component {comp.dim!r}: beta outside (0, pi]")
        width = dim.span + 1.0
        wa = comp.beta * (col_a - dim.lo) / width
        wb = comp.beta * (col_b - dim.lo) / width
        return np.cos(np.abs(wa[:, None] - wb[None, :]))
    if comp.kind == CS:
        assert comp.c is not None
        lo, hi = cs_feasible_interval(dim.n_categories)
        if not (lo < comp.c < hi):
            raise InfeasibleParameterError(
                f"component {comp.dim!r}: correlation {comp.c} outside ({lo}, {hi})"
            )
        ia = col_a.astype(np.intp)
        ib = col_b.astype(np.intp)
        return np.where(ia[:, None] == ib[None, :], 1.0, comp.c)
    if comp.kind == GROUPED_CS:
        sizes = np.bincount(dim.group_index_per_category()).tolist()
        B = comp.between_matrix()
        validate_grouped_cs(sizes, B, dim_name=dim.name)
        C = grouped_cs_matrix(dim, B)
        ia = col_a.astype(np.intp)
        ib = col_b.astype(np.intp)
        return C[np.ix_(ia, ib)]
    raise SchemaError(f"unknown kernel component kind {comp.kind!r}")


def _combine(spec: KernelSpec, parts: list[np.ndarray]) -> np.ndarray:
    if spec.composition == PRODUCT:
        out = parts[0].copy()
        for p in parts[1:]:
            out *= p
    elif spec.composition == SUM:
        out = parts[0].copy()
        for p in parts[1:]:
            out += p
    else:
        out = 1.0 + parts[0]
        for p in parts[1:]:
            out *= 1.0 + p
    return spec.amplitude * out


def cross_gram(
    spec: KernelSpec,
    schema: TaskSchema,
    points_a: Sequence[TaskPoint],
    points_b: Sequence[TaskPoint],
) -> np.ndarray:
    """Covariance matrix between two point lists (no jitter)."""
    enc_a = schema.encode(points_a)
    enc_b = schema.encode(points_b)
    parts = []
    for comp in spec.components:
        j = schema.index_of(comp.dim)
        parts.append(_component_corr(comp, schema.dims[j], enc_a[:, j], enc_b[:, j]))
    return _combine(spec, parts)


def gram(
    spec: KernelSpec,
    schema: TaskSchema,
    points: Sequence[TaskPoint],
    jitter: float = 1e-8,
) -> np.ndarray:
    """Covariance matrix of a point list, exactly symmetric, with a scaled
    jitter ridge on the diagonal."""
    K = cross_gram(spec, schema, points, points)
    K = 0.5 * (K + K.T)
    if jitter:
        K[np.diag_indices_from(K)] += jitter * spec.amplitude
    return K


def prior_variance(spec: KernelSpec, schema: TaskSchema, points: Sequence[TaskPoint]) -> np.ndarray:
    """Diagonal of the prior covariance at each point (no jitter)."""
    enc = schema.encode(points)
    parts = []
    for comp in spec.components:
        j = schema.index_of(comp.dim)
        col = enc[:, j]
        corr = _component_corr(comp, schema.dims[j], col, col)
        parts.append(np.diag(corr).copy())
    if spec.composition == PRODUCT:
        out = parts[0]
        for p in parts[1:]:
            out = out * p
    elif spec.composition == SUM:
        out = parts[0]
        for p in parts[1:]:
            out = out + p
    else:
        out = 1.0 + parts[0]
        for p in parts[1:]:
            out = out * (1.0 + p)
    return spec.amplitude * out


# ---------------------------------------------------------------------------
# Parameterisation for optimisation


def _sigmoid(x: float) -> float:
    if x >= 0:
        z = math.exp(-x)
        return 1.0 / (1.0 + z)
    z = math.exp(x)
    return z / (1.0 + z)


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


_RAW_BOX = 6.0


@dataclass(frozen=True)
class Param:
    """One optimiser coordinate with its transform to natural scale.

    ``log`` maps raw to ``exp(raw)``; ``interval`` squashes the raw box onto
    an open interval ``(nat_lo, nat_hi)``; ``identity`` passes through.
    """

    name: str
    value: float
    lo: float
    hi: float
    transform: str = "identity"
    nat_lo: float = 0.0
    nat_hi: float = 1.0

    def natural(self) -> float:
        if self.transform == "log":
            return math.exp(self.value)
        if self.transform == "interval":
            return self.nat_lo + (self.nat_hi - self.nat_lo) * _sigmoid(self.value)
        return self.value

    def with_natural(self, nat: float) -> "Param":
        if self.transform == "log":
            raw = math.log(nat)
        elif self.transform == "interval":
            frac = (nat - self.nat_lo) / (self.nat_hi - self.nat_lo)
            frac = min(max(frac, 1e-9), 1.0 - 1e-9)
            raw = _logit(frac)
        else:
            raw = nat
        return replace(self, value=float(np.clip(raw, self.lo, self.hi)))


@dataclass(frozen=True)
class HyperParams:
    """Ordered parameter collection the optimiser sees as one vector."""

    params: tuple[Param, ...]

    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)

    def vector(self) -> np.ndarray:
        return np.array([p.value for p in self.params], dtype=np.float64)

    def bounds(self) -> list[tuple[float, float]]:
        return [(p.lo, p.hi) for p in self.params]

    def with_vector(self, vec: np.ndarray) -> "HyperParams":
        if len(vec) != len(self.params):
            raise ValueError(f"expected {len(self.params)} values, got {len(vec)}")
        return HyperParams(tuple(replace(p, value=float(v)) for p, v in zip(self.params, vec)))

    def natural(self) -> dict[str, float]:
        return {p.name: p.natural() for p in self.params}

    def get(self, name: str) -> Param:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)


def _log_param(name: str, nat_lo: float, nat_hi: float, init: float | None = None) -> Param:
    lo, hi = math.log(nat_lo), math.log(nat_hi)
    mid = 0.5 * (lo + hi) if init is None else float(np.clip(math.log(init), lo, hi))
    return Param(name=name, value=mid, lo=lo, hi=hi, transform="log")


def kernel_params(
    spec: KernelSpec,
    schema: TaskSchema,
    encoded_train: np.ndarray,
    output_variance: float,
) -> HyperParams:
    """Optimisable parameters for a kernel spec given the training inputs.

    Lengthscales are bounded above by 1e1 times the observed input range and
    below by the larger of 1e-2 times that range and half the smallest gap
    between distinct training values; sub-resolution lengthscales are
    unidentifiable from the data and only degrade interpolation.  The
    amplitude is bounded by 1e-3 to 1e3 times the output variance, betas live
    in [pi/100, pi], and correlations are squashed onto their open feasible
    intervals.
    """
    if output_variance <= 0.0:
        raise ValueError("output variance must be positive")
    params: list[Param] = [
        _log_param("log_amplitude", 1e-3 * output_variance, 1e3 * output_variance, init=output_variance)
    ]
    for comp in spec.components:
        d = schema.dim(comp.dim)
        j = schema.index_of(comp.dim)
        if comp.kind in (SE, MATERN52):
            col = encoded_train[:, j]
            rng = float(col.max() - col.min()) if col.size else 0.0
            if rng <= 0.0:
                rng = d.span if d.kind != CATEGORICAL and d.span > 0 else 1.0
            lo = 1e-2 * rng
            levels = np.unique(col)
            if levels.size > 1:
                lo = max(lo, 0.5 * float(np.diff(levels).min()))
            params.append(_log_param(f"log_lengthscale:{comp.dim}", min(lo, rng), 1e1 * rng))
        elif comp.kind in (WARPED_SE, WARPED_MATERN52):
            params.append(_log_param(f"log_lengthscale:{comp.dim}", 1e-2, 1e1))
        elif comp.kind == COSINE:
            params.append(
                Param(
                    name=f"beta:{comp.dim}",
                    value=math.pi / 2,
                    lo=math.pi / 100,
                    hi=math.pi,
                    transform="identity",
                )
            )
        elif comp.kind == CS:
            lo, hi = cs_feasible_interval(d.n_categories)
            params.append(
                Param(
                    name=f"corr:{comp.dim}",
                    value=0.0,
                    lo=-_RAW_BOX,
                    hi=_RAW_BOX,
                    transform="interval",
                    nat_lo=lo,
                    nat_hi=hi,
                )
            )
        elif comp.kind == GROUPED_CS:
            labels = d.group_labels()
            sizes = np.bincount(d.group_index_per_category())
            for g, lab in enumerate(labels):
                if sizes[g] < 2:
                    continue  # within-correlation of a singleton group never acts
                lo, hi = cs_feasible_interval(int(sizes[g]))
                params.append(
                    Param(
                        name=f"corr:{comp.dim}:{lab}|{lab}",
                        value=0.0,
                        lo=-_RAW_BOX,
                        hi=_RAW_BOX,
                        transform="interval",
                        nat_lo=lo,
                        nat_hi=hi,
                    )
                )
            for g in range(len(labels)):
                for g2 in range(g + 1, len(labels)):
                    params.append(
                        Param(
                            name=f"corr:{comp.dim}:{labels[g]}|{labels[g2]}",
                            value=0.0,
                            lo=-_RAW_BOX,
                            hi=_RAW_BOX,
                            transform="interval",
                            nat_lo=-1.0,
                            nat_hi=1.0,
                        )
                    )
    return HyperParams(tuple(params))


def apply_kernel_params(spec: KernelSpec, schema: TaskSchema, natural: Mapping[str, float]) -> KernelSpec:
    """Rebuild a kernel spec from natural parameter values by name."""
    comps: list[KernelComponent] = []
    for comp in spec.components:
        if comp.kind in _NUMERIC_KINDS:
            comps.append(replace(comp, lengthscale=natural[f"log_lengthscale:{comp.dim}"]))
        elif comp.kind == COSINE:
            comps.append(replace(comp, beta=natural[f"beta:{comp.dim}"]))
        elif comp.kind == CS:
            comps.append(replace(comp, c=natural[f"corr:{comp.dim}"]))
        else:
            d = schema.dim(comp.dim)
            labels = d.group_labels()
            sizes = np.bincount(d.group_index_per_category())
            G = len(labels)
            B = np.zeros((G, G), dtype=np.float64)
            for g in range(G):
                if sizes[g] >= 2:
                    B[g, g] = natural[f"corr:{comp.dim}:{labels[g]}|{labels[g]}"]
                for g2 in range(g + 1, G):
                    v = natural[f"corr:{comp.dim}:{labels[g]}|{labels[g2]}"]
                    B[g, g2] = B[g2, g] = v
            between = tuple(tuple(float(x) for x in row) for row in B)
            comps.append(replace(comp, between=between))
    return KernelSpec(
        composition=spec.composition,
        amplitude=float(natural["log_amplitude"]),
        components=tuple(comps),
    )
