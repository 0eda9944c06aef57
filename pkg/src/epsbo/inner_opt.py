"""Constrained global minimization of acquisition surfaces on the unit cube.

Two stages: a deterministic dividing-rectangles (DIRECT) global search, then
a bounded gradient-based local polish seeded at the DIRECT incumbent.  The
better of the two stages is returned, so adding the local stage can never
hurt.

The DIRECT stage keeps a pool of hyperrectangles, each represented by its
center, its per-dimension trisection depth, and the objective value at the
center.  Every iteration it selects the potentially optimal rectangles (the
lower-right convex hull of the (diameter, value) cloud, filtered by the
classic relative-improvement test with epsilon = 1e-4) and trisects each of
them along its longest sides, sampling two new centers per divided side.
Selection ties prefer larger rectangles and then lower creation index, and
division within a rectangle proceeds through the longest sides in order of
their best sampled value, so the whole search is deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .exceptions import OptimizerError

# relative improvement required by the potential-optimality test
_EPS_DIRECT = 1e-4

# iterations without incumbent improvement beyond fun_tolerance before stopping
_STALL_ITERATIONS = 50


@dataclass(frozen=True)
class DirectConfig:
    """Budgets for the global stage."""

    fun_tolerance: float = 1e-9
    max_evals: int = 2000
    max_iters: int = 20000
    max_rect_divisions: int = 20000

    def __post_init__(self) -> None:
        if self.fun_tolerance <= 0 or min(self.max_evals, self.max_iters, self.max_rect_divisions) <= 0:
            raise ValueError("all DirectConfig fields must be positive")

    @classmethod
    def for_dimension(cls, d: int) -> "DirectConfig":
        """Default budgets scaled by dimension: 1e3*d evals, 1e4*d iterations and divisions."""
        return cls(1e-9, 1000 * d, 10_000 * d, 10_000 * d)


@dataclass(frozen=True)
class LocalConfig:
    """Budgets and tolerances for the local stage."""

    fun_tolerance: float = 1e-12
    step_tolerance: float = 1e-12
    max_iters: int = 200
    max_evals: int = 5000

    def __post_init__(self) -> None:
        if (
            self.fun_tolerance <= 0
            or self.step_tolerance <= 0
            or min(self.max_iters, self.max_evals) <= 0
        ):
            raise ValueError("all LocalConfig fields must be positive")


class _Rect:
    __slots__ = ("center", "levels", "value", "index", "diameter")

    def __init__(self, center: np.ndarray, levels: tuple[int, ...], value: float, index: int):
        self.center = center
        self.levels = levels
        self.value = value
        self.index = index
        self.diameter = _diameter(levels)


def _diameter(levels: tuple[int, ...]) -> float:
    # summing the sorted side lengths keeps the float result identical for
    # every permutation of the same trisection depths
    sides = sorted(9.0 ** -l for l in levels)
    return 0.5 * math.sqrt(math.fsum(sides))


def _check_finite(value: float, x: np.ndarray) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise OptimizerError(f"objective returned non-finite value {value} at {x.tolist()}")
    return value


def _potentially_optimal(rects: list[_Rect], f_best: float) -> list[_Rect]:
    groups: dict[float, _Rect] = {}
    for r in rects:
        cur = groups.get(r.diameter)
        if cur is None or r.value < cur.value or (r.value == cur.value and r.index < cur.index):
            groups[r.diameter] = r
    pts = sorted(groups.items())  # ascending diameter
    if len(pts) == 1:
        return [pts[0][1]]

    # anchor at the best value; ties go to the larger rectangle
    start = 0
    for i in range(1, len(pts)):
        if pts[i][1].value <= pts[start][1].value:
            start = i
    chain = [start]
    i = start
    while i < len(pts) - 1:
        best_j, best_slope = i + 1, math.inf
        for j in range(i + 1, len(pts)):
            slope = (pts[j][1].value - pts[i][1].value) / (pts[j][0] - pts[i][0])
            if slope <= best_slope:
                best_slope, best_j = slope, j
        chain.append(best_j)
        i = best_j

    selected = []
    for t, i in enumerate(chain):
        if t == len(chain) - 1:
            selected.append(pts[i][1])
            continue
        j = chain[t + 1]
        slope = (pts[j][1].value - pts[i][1].value) / (pts[j][0] - pts[i][0])
        if pts[i][1].value - slope * pts[i][0] <= f_best - _EPS_DIRECT * abs(f_best):
            selected.append(pts[i][1])
    return selected


def direct_minimize(objective, d: int, cfg: DirectConfig | None = None) -> tuple[np.ndarray, float]:
    """Deterministic global search over [0, 1]^d.

    Stops on any configured budget (evaluations, iterations, rectangle
    divisions) or when the incumbent has not improved by more than
    ``fun_tolerance`` for several consecutive iterations.
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    cfg = cfg or DirectConfig.for_dimension(d)

    n_evals = 0

    def evaluate(x: np.ndarray) -> float:
        nonlocal n_evals
        n_evals += 1
        return _check_finite(objective(x), x)

    center = np.full(d, 0.5)
    f_center = evaluate(center)
    best_x, best_f = center, f_center
    rects = [_Rect(center, (0,) * d, f_center, 0)]
    next_index = 1
    n_divisions = 0
    stall = 0

    for _ in range(cfg.max_iters):
        if n_evals + 2 > cfg.max_evals or n_divisions >= cfg.max_rect_divisions:
            break
        previous_best = best_f
        selected = _potentially_optimal(rects, best_f)
        selected.sort(key=lambda r: (-r.diameter, r.index))
        out_of_budget = False
        for rect in selected:
            if n_divisions >= cfg.max_rect_divisions:
                out_of_budget = True
                break
            level = min(rect.levels)
            delta = 3.0 ** -(level + 1)
            long_dims = [j for j, l in enumerate(rect.levels) if l == level]
            samples = []
            for j in long_dims:
                if n_evals + 2 > cfg.max_evals:
                    out_of_budget = True
                    break
                x_plus = rect.center.copy()
                x_plus[j] += delta
                x_minus = rect.center.copy()
                x_minus[j] -= delta
                f_plus = evaluate(x_plus)
                f_minus = evaluate(x_minus)
                if f_plus < best_f:
                    best_x, best_f = x_plus, f_plus
                if f_minus < best_f:
                    best_x, best_f = x_minus, f_minus
                samples.append((min(f_plus, f_minus), j, x_plus, f_plus, x_minus, f_minus))
            # best-valued side first, so it keeps the largest remaining box
            samples.sort(key=lambda s: (s[0], s[1]))
            levels = list(rect.levels)
            for _, j, x_plus, f_plus, x_minus, f_minus in samples:
                levels[j] += 1
                frozen = tuple(levels)
                rects.append(_Rect(x_plus, frozen, f_plus, next_index))
                rects.append(_Rect(x_minus, frozen, f_minus, next_index + 1))
                next_index += 2
                n_divisions += 1
            rect.levels = tuple(levels)
            rect.diameter = _diameter(rect.levels)
            if out_of_budget:
                break
        if previous_best - best_f > cfg.fun_tolerance:
            stall = 0
        else:
            stall += 1
        if stall >= _STALL_ITERATIONS or out_of_budget:
            break

    return np.clip(best_x, 0.0, 1.0), best_f


def local_refine(objective, gradient, x0, cfg: LocalConfig | None = None) -> tuple[np.ndarray, float]:
    """Bounded quasi-Newton polish from ``x0``; never returns a worse point.

    ``fun_tolerance`` and ``step_tolerance`` map to the L-BFGS-B ``ftol``
    and projected-gradient ``gtol`` termination tests.
    """
    cfg = cfg or LocalConfig()
    x0 = np.clip(np.asarray(x0, dtype=float), 0.0, 1.0)
    f0 = _check_finite(objective(x0), x0)

    def fun_and_grad(x):
        value = _check_finite(objective(x), x)
        grad = np.asarray(gradient(x), dtype=float)
        if not np.all(np.isfinite(grad)):
            raise OptimizerError(f"gradient returned non-finite values at {x.tolist()}")
        return value, grad

    res = minimize(
        fun_and_grad,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=[(0.0, 1.0)] * x0.size,
        options={
            "maxiter": cfg.max_iters,
            "maxfun": cfg.max_evals,
            "ftol": cfg.fun_tolerance,
            "gtol": cfg.step_tolerance,
        },
    )
    x_best = np.clip(np.asarray(res.x, dtype=float), 0.0, 1.0)
    f_best = float(res.fun)
    if not math.isfinite(f_best) or f_best > f0:
        return x0, f0
    return x_best, f_best


def minimize_acquisition(
    objective,
    gradient=None,
    d: int | None = None,
    direct_cfg: DirectConfig | None = None,
    local_cfg: LocalConfig | None = None,
) -> tuple[np.ndarray, float]:
    """DIRECT search followed by local refinement when a gradient exists.

    Returns the better of the two stages; without a gradient the DIRECT
    result stands alone.
    """
    if d is None:
        raise ValueError("dimension d is required")
    x1, f1 = direct_minimize(objective, d, direct_cfg or DirectConfig.for_dimension(d))
    if gradient is None:
        return x1, f1
    x2, f2 = local_refine(objective, gradient, x1, local_cfg or LocalConfig())
    if f2 <= f1:
        return x2, f2
    return x1, f1


def make_inner(d: int, direct_cfg: DirectConfig | None = None, local_cfg: LocalConfig | None = None):
    """Optimizer handle for the policies: inner(objective, gradient) -> (x, f)."""
    dcfg = direct_cfg or DirectConfig.for_dimension(d)
    lcfg = local_cfg or LocalConfig()

    def inner(objective, gradient=None):
        return minimize_acquisition(objective, gradient, d, dcfg, lcfg)

    return inner
