"""Limited-memory BFGS: curvature history, two-loop recursion and an inner-iteration driver."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from pinnflow.errors import DimensionMismatchError, NonFiniteLossError
from pinnflow.optim.adam import check_gradient
from pinnflow.optim.linesearch import LineSearchFailure, LineSearchResult, Objective, wolfe_line_search

logger = logging.getLogger(__name__)

CURVATURE_TOL = 1e-10

StepRule = Callable[[np.ndarray, np.ndarray, np.ndarray], float]


@dataclass
class LbfgsState:
    """Bounded history of (s, y, rho = 1 / y.s) pairs, newest last."""

    capacity: int = 50
    s: deque = field(default_factory=deque)
    y: deque = field(default_factory=deque)
    rho: deque = field(default_factory=deque)
    last_grad: np.ndarray | None = None
    iteration: int = 0

    def __len__(self) -> int:
        return len(self.s)

    def reset(self) -> None:
        """Forget every curvature pair (at a batch switch)."""
        self.s.clear()
        self.y.clear()
        self.rho.clear()
        self.last_grad = None


def lbfgs_update(state: LbfgsState, s: np.ndarray, y: np.ndarray) -> LbfgsState:
    """Store the pair when y.s > tol * |s| |y|; evict the oldest beyond capacity."""
    if s.shape != y.shape:
        raise DimensionMismatchError(f"s {s.shape} and y {y.shape} disagree")
    ys = float(y @ s)
    if not ys > CURVATURE_TOL * np.linalg.norm(s) * np.linalg.norm(y):
        logger.debug("skipped curvature pair with y.s = %.3e", ys)
        return state
    state.s.append(s.copy())
    state.y.append(y.copy())
    state.rho.append(1.0 / ys)
    while len(state.s) > state.capacity:
        state.s.popleft()
        state.y.popleft()
        state.rho.popleft()
    return state


def lbfgs_direction(state: LbfgsState, grad: np.ndarray) -> np.ndarray:
    """Two-loop recursion with initial scaling s.y / y.y from the newest pair."""
    q = np.array(grad, dtype=np.float64)
    if not len(state):
        return -q
    alphas = []
    for s, y, rho in zip(reversed(state.s), reversed(state.y), reversed(state.rho)):
        a = rho * (s @ q)
        q -= a * y
        alphas.append(a)
    s_new, y_new = state.s[-1], state.y[-1]
    r = (s_new @ y_new) / (y_new @ y_new) * q
    for (s, y, rho), a in zip(zip(state.s, state.y, state.rho), reversed(alphas)):
        b = rho * (y @ r)
        r += (a - b) * s
    return -r


@dataclass
class LbfgsRun:
    """Outcome of a block of inner iterations."""

    x: np.ndarray
    f: float
    grad: np.ndarray
    iterations: int
    evals: int
    failure: LineSearchFailure | None = None
    converged: bool = False


def minimize_lbfgs(
    objective: Objective,
    x0: np.ndarray,
    state: LbfgsState,
    iterations: int,
    c1: float = 1e-4,
    c2: float = 0.9,
    max_evals: int = 25,
    gtol: float = 0.0,
    callback: Callable[[int, float, np.ndarray], None] | None = None,
    exact_step: StepRule | None = None,
) -> LbfgsRun:
    """Run up to ``iterations`` L-BFGS steps; stops early on a line-search failure or ``|g| <= gtol``.

    ``callback(iteration, f, x)`` fires after every accepted step. With ``exact_step`` the
    Wolfe search is replaced by ``alpha = exact_step(x, d, g)`` and one evaluation per step.
    """
    x = np.array(x0, dtype=np.float64)
    f, g = objective(x)
    if not np.isfinite(f):
        raise NonFiniteLossError(f"loss evaluated to {f} at the start of an L-BFGS block")
    check_gradient(g)
    evals = 1
    for it in range(iterations):
        if np.linalg.norm(g) <= gtol:
            return LbfgsRun(x, f, g, it, evals, converged=True)
        d = lbfgs_direction(state, g)
        alpha0 = 1.0 if len(state) else min(1.0, 1.0 / max(np.linalg.norm(g), 1e-300))
        if exact_step is None:
            search = wolfe_line_search(objective, x, d, f, g, c1=c1, c2=c2, max_evals=max_evals, alpha0=alpha0)
        else:
            search = _exact_search(objective, x, d, g, exact_step)
        evals += search.evals
        if not search.success:
            logger.debug("line search failed after %d evaluations: %s", search.evals, search.failure.value)
            return LbfgsRun(x, f, g, it, evals, failure=search.failure)
        check_gradient(search.grad)
        step = search.alpha * d
        lbfgs_update(state, step, search.grad - g)
        x, f, g = x + step, search.f, search.grad
        state.last_grad = g
        state.iteration += 1
        if callback is not None:
            callback(it, f, x)
    return LbfgsRun(x, f, g, iterations, evals, converged=bool(np.linalg.norm(g) <= gtol))


def quadratic_step(hessian: np.ndarray) -> StepRule:
    """Exact minimizing step along d for a quadratic with constant ``hessian``: -g.d / d.A.d."""
    a = np.asarray(hessian, dtype=np.float64)

    def step(x: np.ndarray, direction: np.ndarray, grad: np.ndarray) -> float:
        return float(-(grad @ direction) / (direction @ a @ direction))

    return step


def _exact_search(objective: Objective, x: np.ndarray, direction: np.ndarray, g: np.ndarray, rule: StepRule) -> LineSearchResult:
    if not g @ direction < 0.0:
        return LineSearchResult(0.0, np.nan, None, 0, LineSearchFailure.NOT_DESCENT)
    alpha = rule(x, direction, g)
    if not (np.isfinite(alpha) and alpha > 0.0):
        return LineSearchResult(0.0, np.nan, None, 0, LineSearchFailure.STEP_UNDERFLOW)
    f, grad = objective(x + alpha * direction)
    return LineSearchResult(alpha, f, grad, 1)
