"""Multistart maximisation of noisy-surface objectives.

Starts are drawn by Latin hypercube over the transformed-parameter box and
polished with a bounded local method (Nelder-Mead by default, L-BFGS-B with
finite differences as the alternative).  Everything is deterministic for a
fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

NELDER_MEAD = "nelder-mead"
LBFGSB = "lbfgsb"


class InitializationError(RuntimeError):
    """No finite starting point could be drawn."""


@dataclass(frozen=True)
class OptControl:
    """Budget and reproducibility knobs for one optimisation."""

    n_starts: int = 8
    max_evals: int = 500
    tol: float = 1e-6
    seed: int = 0
    method: str = NELDER_MEAD

    def __post_init__(self) -> None:
        if self.n_starts < 1:
            raise ValueError("need at least one start")
        if self.max_evals < 1:
            raise ValueError("need a positive evaluation budget")
        if self.method not in (NELDER_MEAD, LBFGSB):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass(frozen=True)
class StartTrace:
    """What one local search did: where it began, where it ended."""

    start: np.ndarray
    value_at_start: float
    best: np.ndarray
    value: float
    n_evals: int


@dataclass(frozen=True)
class OptResult:
    theta: np.ndarray
    value: float
    traces: tuple[StartTrace, ...]

    @property
    def n_evals(self) -> int:
        return sum(t.n_evals for t in self.traces)


_REDRAW_ROUNDS = 10


def _draw_starts(
    objective: Callable[[np.ndarray], float],
    bounds: Sequence[tuple[float, float]],
    control: OptControl,
) -> list[tuple[np.ndarray, float]]:
    lo = np.array([b[0] for b in bounds], dtype=np.float64)
    hi = np.array([b[1] for b in bounds], dtype=np.float64)
    sampler = qmc.LatinHypercube(d=len(bounds), seed=control.seed)
    found: list[tuple[np.ndarray, float]] = []
    for _ in range(_REDRAW_ROUNDS):
        unit = sampler.random(control.n_starts)
        cands = lo + unit * (hi - lo)
        for row in cands:
            v = objective(row)
            if np.isfinite(v):
                found.append((row, float(v)))
                if len(found) == control.n_starts:
                    return found
    if not found:
        raise InitializationError(
            f"objective not finite at any of {control.n_starts * _REDRAW_ROUNDS} drawn starts"
        )
    return found


def optimize(
    objective: Callable[[np.ndarray], float],
    bounds: Sequence[tuple[float, float]],
    control: OptControl | None = None,
    extra_starts: Sequence[np.ndarray] = (),
) -> OptResult:
    """Maximise ``objective`` over a box.

    Non-finite objective values are tolerated during search (they repel the
    local method) but starting points must be finite; up to ten rounds of
    fresh Latin hypercube draws are spent finding them.  ``extra_starts``
    are appended warm starts, skipped when not finite.
    """
    if control is None:
        control = OptControl()
    bounds = [(float(lo), float(hi)) for lo, hi in bounds]
    for lo, hi in bounds:
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ValueError("bounds must be finite with lo < hi")

    def neg(x: np.ndarray) -> float:
        v = objective(np.asarray(x, dtype=np.float64))
        if not np.isfinite(v):
            return 1e30
        return -float(v)

    starts = _draw_starts(objective, bounds, control)
    for extra in extra_starts:
        x = np.clip(np.asarray(extra, dtype=np.float64), [b[0] for b in bounds], [b[1] for b in bounds])
        v = objective(x)
        if np.isfinite(v):
            starts.append((x, float(v)))

    traces: list[StartTrace] = []
    best_x: np.ndarray | None = None
    best_v = -np.inf
    for x0, v0 in starts:
        if control.method == NELDER_MEAD:
            res = minimize(
                neg,
                x0,
                method="Nelder-Mead",
                bounds=bounds,
                options={
                    "maxfev": control.max_evals,
                    "fatol": control.tol,
                    "xatol": 1e-6,
                    "adaptive": True,
                },
            )
        else:
            res = minimize(
                neg,
                x0,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxfun": control.max_evals, "ftol": control.tol},
            )
        xb = np.clip(res.x, [b[0] for b in bounds], [b[1] for b in bounds])
        vb = -neg(xb)
        if not np.isfinite(vb) or vb < v0:
            xb, vb = x0, v0  # local method must never hand back something worse
        traces.append(
            StartTrace(
                start=np.asarray(x0, dtype=np.float64),
                value_at_start=v0,
                best=xb,
                value=vb,
                n_evals=int(res.nfev) + 1,
            )
        )
        if vb > best_v:
            best_v = vb
            best_x = xb
    assert best_x is not None
    return OptResult(theta=best_x, value=best_v, traces=tuple(traces))
