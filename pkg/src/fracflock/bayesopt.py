"""Expected-improvement Bayesian optimization on an interval.

The acquisition is maximized with a dividing-intervals search in the
DIRECT family: intervals keep their center value, potentially optimal
ones are selected by the lower-convex-hull criterion over
(half-width, value) with a small balance parameter, and selected
intervals are trisected.  Every stage is deterministic.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from fracflock.gpr import GpModel, fit, predict

__all__ = [
    "BoConfig",
    "BoHistory",
    "BoRecord",
    "LossEvaluationError",
    "expected_improvement",
    "maximize_acquisition",
    "optimize",
]

SIGMA_DEGENERATE = 1e-12
DEFAULT_EVAL_BUDGET = 200
WIDTH_STOP_FRACTION = 1e-4
HULL_BALANCE = 1e-4


class LossEvaluationError(RuntimeError):
    """Three consecutive loss failures; carries the partial history."""

    def __init__(self, message: str, history: "BoHistory"):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class BoConfig:
    bounds: tuple[float, float] = (0.1, 1.9)
    max_iterations: int = 30
    ei_tolerance: float = 1e-6
    initial_design: tuple[float, ...] | None = None
    n_initial: int = 2
    seed: int = 0
    noise_mode: str = "learn"
    acquisition_budget: int = DEFAULT_EVAL_BUDGET

    def __post_init__(self) -> None:
        lo, hi = self.bounds
        if not (0.0 < lo < hi < 2.0):
            raise ValueError("bounds must be an interval inside (0, 2)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.initial_design is not None:
            if any(not lo <= a <= hi for a in self.initial_design):
                raise ValueError("initial design points must lie inside bounds")


@dataclass
class BoRecord:
    iteration: int
    alpha: float
    loss: float
    ei: float  # acquisition value when the point was selected (nan for seeds)
    best: float


@dataclass
class BoHistory:
    records: list[BoRecord] = field(default_factory=list)

    def append(self, iteration: int, alpha: float, loss: float, ei: float) -> None:
        finite = [r.best for r in self.records if math.isfinite(r.best)]
        prev = min(finite) if finite else math.inf
        best = min(prev, loss if math.isfinite(loss) else math.inf)
        self.records.append(BoRecord(iteration, alpha, loss, ei, best))

    @property
    def best_record(self) -> BoRecord:
        return min(
            (r for r in self.records if math.isfinite(r.loss)),
            key=lambda r: r.loss,
        )

    def write(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "alpha", "loss", "ei", "best"])
            for r in self.records:
                writer.writerow(
                    [r.iteration, repr(r.alpha), repr(r.loss), repr(r.ei), repr(r.best)]
                )


def _standard_normal_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def _standard_normal_pdf(z: float) -> float:
    return math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def expected_improvement(model: GpModel, alpha: float) -> float:
    """EI(a) = (f_min - m*) Phi(z) + s* phi(z) with z = (f_min - m*)/s*.

    Degenerate predictive spread falls back to the certain improvement
    max(f_min - m*, 0).
    """
    mean, std = predict(model, alpha)
    gap = model.incumbent - mean
    if std <= SIGMA_DEGENERATE:
        return max(gap, 0.0)
    z = gap / std
    return gap * _standard_normal_cdf(z) + std * _standard_normal_pdf(z)


@dataclass
class _Interval:
    center: float
    depth: int  # half-width = hw0 / 3**depth
    value: float  # negated acquisition (we minimize)
    order: int  # insertion index, for deterministic ties


def _potentially_optimal(intervals: list[_Interval], f_min: float) -> list[int]:
    """Jones' potentially-optimal selection over (half-width, value)."""
    by_depth: dict[int, int] = {}
    for idx, box in enumerate(intervals):
        best = by_depth.get(box.depth)
        if best is None:
            by_depth[box.depth] = idx
        else:
            other = intervals[best]
            if (box.value, box.order) < (other.value, other.order):
                by_depth[box.depth] = idx
    # larger half-width = smaller depth
    candidates = [by_depth[d] for d in sorted(by_depth)]
    selected = []
    for idx in candidates:
        box = intervals[idx]
        hw = 3.0**-box.depth
        ok = True
        # lower convex hull on (hw, value): box must not lie above any
        # segment between a smaller and a larger interval
        smaller = [j for j in candidates if intervals[j].depth > box.depth]
        larger = [j for j in candidates if intervals[j].depth < box.depth]
        lo_slope = -math.inf
        for j in smaller:
            other = intervals[j]
            ohw = 3.0**-other.depth
            lo_slope = max(lo_slope, (box.value - other.value) / (hw - ohw))
        hi_slope = math.inf
        for j in larger:
            other = intervals[j]
            ohw = 3.0**-other.depth
            hi_slope = min(hi_slope, (other.value - box.value) / (ohw - hw))
        if lo_slope > hi_slope:
            ok = False
        if ok and larger:
            # require nontrivial improvement potential over the incumbent
            ref = abs(f_min) if f_min != 0 else 1.0
            if f_min != 0:
                ok = (
                    HULL_BALANCE
                    <= (f_min - box.value) / ref + (hw / ref) * hi_slope
                )
            else:
                ok = box.value <= hw * hi_slope
        if ok:
            selected.append(idx)
    return selected


def maximize_acquisition(
    model_or_function,
    bounds: tuple[float, float],
    eval_budget: int = DEFAULT_EVAL_BUDGET,
) -> float:
    """Deterministic dividing-intervals maximization on ``bounds``.

    Accepts a fitted GP model (maximizes its expected improvement) or any
    callable.  Returns the best evaluated center; never fails on budget
    exhaustion.
    """
    if isinstance(model_or_function, GpModel):
        objective: Callable[[float], float] = lambda a: expected_improvement(
            model_or_function, a
        )
    else:
        objective = model_or_function
    lo, hi = bounds
    if not hi > lo:
        raise ValueError("empty bounds")
    span = hi - lo
    hw0 = 0.5 * span

    evals = 0

    def f(center: float) -> float:
        nonlocal evals
        evals += 1
        return -float(objective(center))

    intervals = [_Interval(0.5 * (lo + hi), 0, f(0.5 * (lo + hi)), 0)]
    best = intervals[0]
    counter = 1
    while evals < eval_budget:
        if 2.0 * hw0 * 3.0**-best.depth < WIDTH_STOP_FRACTION * span:
            break
        f_min = best.value
        chosen = _potentially_optimal(intervals, f_min)
        if not chosen:
            break
        new_boxes = []
        for idx in chosen:
            box = intervals[idx]
            delta = 2.0 * hw0 * 3.0 ** -(box.depth + 1)
            for direction in (-1.0, 1.0):
                if evals >= eval_budget:
                    break
                center = box.center + direction * delta
                child = _Interval(center, box.depth + 1, f(center), counter)
                counter += 1
                new_boxes.append(child)
            box.depth += 1  # parent shrinks to the middle third
        intervals.extend(new_boxes)
        best = min(intervals, key=lambda b: (b.value, b.order))
    return best.center


def optimize(
    loss: Callable[[float], float],
    config: BoConfig,
    on_evaluation: Callable[[int, float, float], None] | None = None,
    warm_start: GpModel | None = None,
) -> tuple[float, BoHistory, GpModel]:
    """Sequential design: fit the GP, maximize EI, evaluate, repeat.

    Failed loss evaluations are recorded with an infinite loss and excluded
    from GP training; three consecutive failures abort.  Returns the best
    observed point, the full history, and the final model.
    """
    lo, hi = config.bounds
    history = BoHistory()
    alphas: list[float] = []
    losses: list[float] = []

    def evaluate(iteration: int, alpha: float, ei: float) -> None:
        try:
            value = float(loss(alpha))
        except Exception:
            value = math.inf
        history.append(iteration, alpha, value, ei)
        if on_evaluation is not None:
            on_evaluation(iteration, alpha, value)
        if math.isfinite(value):
            alphas.append(alpha)
            losses.append(value)

    iteration = 0
    if warm_start is not None:
        for a, v in zip(warm_start.inputs[:, 0], warm_start.outputs):
            history.append(iteration, float(a), float(v), math.nan)
            alphas.append(float(a))
            losses.append(float(v))
    else:
        if config.initial_design is not None:
            seeds = list(config.initial_design)
        else:
            rng = np.random.default_rng(config.seed)
            seeds = list(lo + (hi - lo) * rng.random(config.n_initial))
        for a in seeds:
            evaluate(iteration, float(a), math.nan)
    if not alphas:
        raise LossEvaluationError("all initial evaluations failed", history)

    failures_in_a_row = 0
    model = fit(alphas, losses, noise_mode=config.noise_mode)
    for iteration in range(1, config.max_iterations + 1):
        proposal = maximize_acquisition(
            model, config.bounds, config.acquisition_budget
        )
        ei = expected_improvement(model, proposal)
        if ei < config.ei_tolerance:
            break
        if any(abs(proposal - a) < 1e-6 for a in alphas):
            center = 0.5 * (lo + hi)
            nudge = 1e-3 * (hi - lo)
            proposal += nudge if center >= proposal else -nudge
            proposal = min(max(proposal, lo), hi)
        before = len(alphas)
        evaluate(iteration, proposal, ei)
        if len(alphas) == before:
            failures_in_a_row += 1
            if failures_in_a_row >= 3:
                raise LossEvaluationError(
                    "three consecutive loss evaluations failed", history
                )
            continue
        failures_in_a_row = 0
        model = fit(alphas, losses, noise_mode=config.noise_mode)
    best = history.best_record
    return best.alpha, history, model
