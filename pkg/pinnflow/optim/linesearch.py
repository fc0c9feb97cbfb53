"""Strong-Wolfe line search: bracketing followed by a cubic-interpolation zoom.

Failures are returned as values so the training loop can read them as a
termination signal.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from pinnflow.errors import ContractViolationError

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


class LineSearchFailure(str, Enum):
    NOT_DESCENT = "not-descent"
    EXHAUSTED_EVALS = "exhausted-evals"
    STEP_UNDERFLOW = "step-underflow"


@dataclass
class LineSearchResult:
    """Accepted step with the objective value and gradient there, or a failure."""

    alpha: float
    f: float
    grad: np.ndarray | None
    evals: int
    failure: LineSearchFailure | None = None

    @property
    def success(self) -> bool:
        return self.failure is None


@dataclass
class _Trial:
    alpha: float
    f: float
    grad: np.ndarray | None
    slope: float


def _cubic_step(lo: _Trial, hi: _Trial) -> float | None:
    """Minimizer of the cubic matching value and slope at both ends, if it exists."""
    if not (np.isfinite(hi.f) and np.isfinite(hi.slope)):
        return None
    d1 = lo.slope + hi.slope - 3.0 * (lo.f - hi.f) / (lo.alpha - hi.alpha)
    radicand = d1 * d1 - lo.slope * hi.slope
    if radicand < 0.0:
        return None
    d2 = np.sign(hi.alpha - lo.alpha) * np.sqrt(radicand)
    denom = hi.slope - lo.slope + 2.0 * d2
    if denom == 0.0:
        return None
    return hi.alpha - (hi.alpha - lo.alpha) * (hi.slope + d2 - d1) / denom


def wolfe_line_search(
    objective: Objective,
    x: np.ndarray,
    direction: np.ndarray,
    f0: float | None = None,
    g0: np.ndarray | None = None,
    c1: float = 1e-4,
    c2: float = 0.9,
    max_evals: int = 25,
    alpha0: float = 1.0,
    step_tol: float = 1e-14,
) -> LineSearchResult:
    """Step length along ``direction`` satisfying both strong Wolfe conditions."""
    if not np.all(np.isfinite(direction)):
        raise ContractViolationError("search direction must be finite")
    evals = 0
    if f0 is None or g0 is None:
        f0, g0 = objective(x)
        evals += 1
    slope0 = float(g0 @ direction)
    if not slope0 < 0.0:
        return LineSearchResult(0.0, f0, g0, evals, LineSearchFailure.NOT_DESCENT)

    def evaluate_at(alpha: float) -> _Trial:
        nonlocal evals
        evals += 1
        f, g = objective(x + alpha * direction)
        slope = float(g @ direction) if np.all(np.isfinite(g)) else np.nan
        return _Trial(alpha, float(f), g, slope)

    def armijo(p: _Trial) -> bool:
        return bool(np.isfinite(p.f)) and p.f <= f0 + c1 * p.alpha * slope0

    def curvature(p: _Trial) -> bool:
        return abs(p.slope) <= -c2 * slope0

    def accept(p: _Trial) -> LineSearchResult:
        return LineSearchResult(p.alpha, p.f, p.grad, evals)

    def zoom(lo: _Trial, hi: _Trial) -> LineSearchResult:
        while evals < max_evals:
            width = abs(hi.alpha - lo.alpha)
            if width <= step_tol * max(1.0, abs(hi.alpha)):
                return LineSearchResult(lo.alpha, lo.f, lo.grad, evals, LineSearchFailure.STEP_UNDERFLOW)
            left, right = sorted((lo.alpha, hi.alpha))
            alpha = _cubic_step(lo, hi)
            if alpha is None or not (left + 0.1 * width <= alpha <= right - 0.1 * width):
                alpha = 0.5 * (lo.alpha + hi.alpha)
            trial = evaluate_at(alpha)
            if not armijo(trial) or trial.f >= lo.f:
                hi = trial
                continue
            if curvature(trial):
                return accept(trial)
            if trial.slope * (hi.alpha - lo.alpha) >= 0.0:
                hi = lo
            lo = trial
        return LineSearchResult(lo.alpha, lo.f, lo.grad, evals, LineSearchFailure.EXHAUSTED_EVALS)

    previous = _Trial(0.0, float(f0), g0, slope0)
    alpha = alpha0
    first = True
    while evals < max_evals:
        trial = evaluate_at(alpha)
        if not armijo(trial) or (not first and trial.f >= previous.f):
            return zoom(previous, trial)
        if curvature(trial):
            return accept(trial)
        if trial.slope >= 0.0:
            return zoom(trial, previous)
        previous, alpha, first = trial, 2.0 * alpha, False
    return LineSearchResult(previous.alpha, previous.f, previous.grad, evals, LineSearchFailure.EXHAUSTED_EVALS)
