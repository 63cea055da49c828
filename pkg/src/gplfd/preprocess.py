"""Temporal alignment of demonstrations.

Raw demonstrations of one task differ in pace.  Each trajectory is summarised
by its task-completion index (normalised cumulative arc length over the output
channels), warped onto a reference demonstration with dynamic time warping,
and resampled to a shared uniform grid so repeated contexts produce exact
replicates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .domain import (
    DataError,
    DegenerateTrajectoryError,
    Demonstration,
    DemonstrationSet,
)


def compute_tci(demo: Demonstration) -> np.ndarray:
    """Task-completion index: cumulative output path length scaled to [0, 1].

    The first sample is pinned to 0 and the last to 1.  Raises
    :class:`DegenerateTrajectoryError` when the trajectory never moves.
    """
    steps = np.linalg.norm(np.diff(demo.y, axis=0), axis=1)
    total = steps.sum()
    if total <= 0.0:
        raise DegenerateTrajectoryError(f"demonstration {demo.id!r} has zero path length")
    zeta = np.concatenate([[0.0], np.cumsum(steps) / total])
    zeta[-1] = 1.0
    return zeta


def dtw_path(ref: np.ndarray, other: np.ndarray) -> tuple[np.ndarray, float]:
    """Optimal monotone warping between two completion profiles.

    Cost of matching ``ref[k]`` with ``other[l]`` is ``|ref[k] - other[l]|``;
    steps move one index forward in either sequence or both.  Returns the
    path as an integer array of (ref index, other index) pairs starting at
    (0, 0) and ending at (K-1, L-1), plus the accumulated cost.  Ties prefer
    the diagonal, so identical profiles map to the identity path.
    """
    r = np.asarray(ref, dtype=np.float64)
    o = np.asarray(other, dtype=np.float64)
    K, L = r.size, o.size
    if K == 0 or L == 0:
        raise DataError("cannot warp an empty profile")
    cost = np.abs(r[:, None] - o[None, :])
    acc = np.empty((K, L), dtype=np.float64)
    acc[0, 0] = cost[0, 0]
    for l in range(1, L):
        acc[0, l] = acc[0, l - 1] + cost[0, l]
    for k in range(1, K):
        acc[k, 0] = acc[k - 1, 0] + cost[k, 0]
        row_prev = acc[k - 1]
        row = acc[k]
        for l in range(1, L):
            best = row_prev[l - 1]
            if row_prev[l] < best:
                best = row_prev[l]
            if row[l - 1] < best:
                best = row[l - 1]
            row[l] = cost[k, l] + best
    path = [(K - 1, L - 1)]
    k, l = K - 1, L - 1
    while k > 0 or l > 0:
        if k == 0:
            l -= 1
        elif l == 0:
            k -= 1
        else:
            diag, up, left = acc[k - 1, l - 1], acc[k - 1, l], acc[k, l - 1]
            if diag <= up and diag <= left:
                k -= 1
                l -= 1
            elif up <= left:
                k -= 1
            else:
                l -= 1
        path.append((k, l))
    path.reverse()
    return np.asarray(path, dtype=np.intp), float(acc[K - 1, L - 1])


def warp_onto_reference(path: np.ndarray, y: np.ndarray, ref_len: int) -> np.ndarray:
    """Average the warped samples that land on each reference index."""
    sums = np.zeros((ref_len, y.shape[1]), dtype=np.float64)
    hits = np.zeros(ref_len, dtype=np.float64)
    for k, l in path:
        sums[k] += y[l]
        hits[k] += 1.0
    return sums / hits[:, None]


@dataclass(frozen=True)
class AlignmentResult:
    """Aligned demonstration set plus the warping paths that produced it."""

    reference_id: str
    paths: Mapping[str, np.ndarray]
    aligned: DemonstrationSet


def pick_reference(dset: DemonstrationSet) -> Demonstration:
    """Reference for alignment: first demonstration with the median sample count."""
    counts = sorted(d.n_samples for d in dset.demonstrations)
    median = counts[(len(counts) - 1) // 2]
    for demo in dset.demonstrations:
        if demo.n_samples == median:
            return demo
    raise AssertionError("unreachable")


def uniform_grid(duration: float, grid_size: int) -> np.ndarray:
    if grid_size < 2:
        raise DataError("grid needs at least two timestamps")
    if duration <= 0.0:
        raise DataError("grid duration must be positive")
    return np.linspace(0.0, duration, grid_size)


def resample_uniform(demo: Demonstration, grid_size: int, duration: float | None = None) -> Demonstration:
    """Linear interpolation onto an evenly spaced grid starting at zero.

    A demonstration already on exactly the requested grid is returned as is,
    so resampling is idempotent.
    """
    dur = demo.duration if duration is None else duration
    grid = uniform_grid(dur, grid_size)
    if demo.n_samples == grid_size and np.array_equal(demo.t, grid):
        return demo
    t0 = demo.t - demo.t[0]
    y = np.column_stack([np.interp(grid, t0, demo.y[:, j]) for j in range(demo.n_outputs)])
    return Demonstration(id=demo.id, context=demo.context, t=grid, y=y)


def dtw_align(
    dset: DemonstrationSet,
    reference: str = "auto",
    grid_size: int = 25,
) -> AlignmentResult:
    """Warp every demonstration onto one reference timeline.

    Completion profiles are matched with :func:`dtw_path`; warped outputs are
    carried onto the reference timestamps and resampled to ``grid_size``
    uniform points on ``[0, reference duration]``.  After alignment every
    demonstration shares the same timestamp grid, so contexts that repeat
    produce exact replicates.
    """
    if reference == "auto":
        ref = pick_reference(dset)
    else:
        for demo in dset.demonstrations:
            if demo.id == reference:
                ref = demo
                break
        else:
            raise DataError(f"no demonstration with id {reference!r}")
    zeta_ref = compute_tci(ref)
    t_ref = ref.t - ref.t[0]
    aligned: list[Demonstration] = []
    paths: dict[str, np.ndarray] = {}
    for demo in dset.demonstrations:
        zeta = compute_tci(demo)
        path, _ = dtw_path(zeta_ref, zeta)
        paths[demo.id] = path
        y_ref = warp_onto_reference(path, demo.y, ref.n_samples)
        warped = Demonstration(id=demo.id, context=demo.context, t=t_ref, y=y_ref)
        aligned.append(resample_uniform(warped, grid_size, duration=ref.duration))
    out = DemonstrationSet(schema=dset.schema, demonstrations=tuple(aligned))
    return AlignmentResult(reference_id=ref.id, paths=paths, aligned=out)


@dataclass(frozen=True, slots=True)
class TimeScaler:
    """Linear map from the reference duration onto a desired duration."""

    t_ref: float
    t_desired: float

    def __post_init__(self) -> None:
        if self.t_ref <= 0.0:
            raise DataError("reference duration must be positive")
        if self.t_desired <= 0.0:
            raise DataError("desired duration must be positive")

    @property
    def rate(self) -> float:
        return self.t_desired / self.t_ref

    def __call__(self, t: np.ndarray | float) -> np.ndarray | float:
        return t * self.rate

    def invert(self, t: np.ndarray | float) -> np.ndarray | float:
        return t / self.rate


def time_scale(demo: Demonstration, scaler: TimeScaler) -> Demonstration:
    """Stretch a demonstration's clock; outputs are untouched."""
    if abs(demo.duration - scaler.t_ref) > 1e-9 * max(1.0, scaler.t_ref):
        raise DataError(
            f"demonstration {demo.id!r} lasts {demo.duration}, scaler expects {scaler.t_ref}"
        )
    t = np.asarray(scaler(demo.t - demo.t[0]), dtype=np.float64)
    return Demonstration(id=demo.id, context=demo.context, t=t, y=demo.y)
