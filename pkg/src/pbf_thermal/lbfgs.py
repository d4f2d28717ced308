"""Full-batch L-BFGS: two-loop recursion with a strong-Wolfe line search."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class LbfgsConfig:
    history_size: int = 50
    max_iterations: int = 2000
    gradient_tolerance: float = 1e-10
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search: int = 25
    initial_step: float = 1.0

    def __post_init__(self):
        if self.history_size < 1:
            raise ValueError("history_size must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be positive")
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("line search constants need 0 < c1 < c2 < 1")


@dataclass
class LbfgsResult:
    x: np.ndarray
    loss: float
    grad: np.ndarray
    status: str  # "converged", "max_iterations" or "line_search_failed"
    iterations: int
    evaluations: int
    trace: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status != "line_search_failed"


def _cubic_min(a1, f1, d1, a2, f2, d2, lo, hi):
    """Minimiser of the cubic interpolating two points with slopes, clipped to [lo, hi]."""
    e1 = d1 + d2 - 3.0 * (f1 - f2) / (a1 - a2)
    disc = e1 * e1 - d1 * d2
    if disc >= 0.0:
        e2 = np.sqrt(disc) * np.sign(a2 - a1)
        a = a2 - (a2 - a1) * ((d2 + e2 - e1) / (d2 - d1 + 2.0 * e2))
        if np.isfinite(a):
            return min(max(a, lo), hi)
    return 0.5 * (lo + hi)


def strong_wolfe(phi, f0, d0, step, c1=1e-4, c2=0.9, max_evals=25):
    """Find a step satisfying the strong Wolfe conditions along a descent direction.

    ``phi(a)`` returns (f, g, directional derivative). Returns
    (a, f, g, evals, ok); when no acceptable step is found the best point
    with sufficient decrease is returned with ``ok=False`` (a=0 if none).
    """
    best = (0.0, f0, None)
    a_prev, f_prev, d_prev = 0.0, f0, d0
    a = step
    evals = 0
    bracket = None
    while evals < max_evals:
        f, g, d = phi(a)
        evals += 1
        if np.isfinite(f) and f <= f0 + c1 * a * d0 and f < best[1]:
            best = (a, f, g)
        if not np.isfinite(f) or f > f0 + c1 * a * d0 or (evals > 1 and f >= f_prev):
            bracket = [(a_prev, f_prev, d_prev), (a, f, d)]
            break
        if abs(d) <= -c2 * d0:
            return a, f, g, evals, True
        if d >= 0:
            bracket = [(a, f, d), (a_prev, f_prev, d_prev)]
            break
        a_prev, f_prev, d_prev = a, f, d
        a = a * 2.0
    if bracket is None:
        return (*best, evals, False)

    (lo_a, lo_f, lo_d), (hi_a, hi_f, hi_d) = bracket
    while evals < max_evals:
        left, right = min(lo_a, hi_a), max(lo_a, hi_a)
        width = right - left
        if width <= 1e-12 * max(1.0, right):
            break
        if np.isfinite(hi_f) and np.isfinite(hi_d):
            a = _cubic_min(lo_a, lo_f, lo_d, hi_a, hi_f, hi_d, left + 0.1 * width, right - 0.1 * width)
        else:
            a = left + 0.5 * width if lo_a < hi_a else right - 0.5 * width
        f, g, d = phi(a)
        evals += 1
        if np.isfinite(f) and f <= f0 + c1 * a * d0 and f < best[1]:
            best = (a, f, g)
        if not np.isfinite(f) or f > f0 + c1 * a * d0 or f >= lo_f:
            hi_a, hi_f, hi_d = a, f, d
        else:
            if abs(d) <= -c2 * d0:
                return a, f, g, evals, True
            if d * (hi_a - lo_a) >= 0:
                hi_a, hi_f, hi_d = lo_a, lo_f, lo_d
            lo_a, lo_f, lo_d = a, f, d
    return (*best, evals, False)


def lbfgs_minimize(objective: Objective, x0: np.ndarray, cfg: LbfgsConfig = LbfgsConfig(),
                   callback: Callable[[int, float, np.ndarray], None] | None = None) -> LbfgsResult:
    """Minimise a smooth deterministic objective.

    Stops when the max-norm of the gradient drops below
    ``cfg.gradient_tolerance``, after ``cfg.max_iterations`` iterations, or
    when the line search cannot make progress. ``trace[k]`` is the loss after
    iteration k (``trace[0]`` is the starting loss) and never increases.
    """
    x = np.array(x0, dtype=float, copy=True)
    f, g = objective(x)
    n_eval = 1
    trace = [float(f)]
    S: deque = deque(maxlen=cfg.history_size)
    Y: deque = deque(maxlen=cfg.history_size)
    rho: deque = deque(maxlen=cfg.history_size)
    status = "max_iterations"
    it = 0
    if not np.isfinite(f):
        raise FloatingPointError("objective is not finite at the starting point")

    while True:
        if np.max(np.abs(g)) < cfg.gradient_tolerance:
            status = "converged"
            break
        if it >= cfg.max_iterations:
            status = "max_iterations"
            break
        # two-loop recursion
        q = -g.copy()
        alphas = []
        for s, y, r in zip(reversed(S), reversed(Y), reversed(rho)):
            a = r * np.dot(s, q)
            alphas.append(a)
            q -= a * y
        if S:
            q *= np.dot(S[-1], Y[-1]) / np.dot(Y[-1], Y[-1])
        for (s, y, r), a in zip(zip(S, Y, rho), reversed(alphas)):
            b = r * np.dot(y, q)
            q += (a - b) * s
        direction = q
        d0 = float(np.dot(g, direction))
        if not d0 < 0:
            # memory produced an ascent direction; restart from steepest descent
            S.clear(), Y.clear(), rho.clear()
            direction = -g
            d0 = float(np.dot(g, direction))
        step = cfg.initial_step
        if not S:
            step = min(cfg.initial_step, 1.0 / max(np.sum(np.abs(g)), 1e-300)) if it == 0 else cfg.initial_step

        def phi(a):
            fa, ga = objective(x + a * direction)
            return fa, ga, float(np.dot(ga, direction))

        a, f_new, g_new, evals, ok = strong_wolfe(phi, f, d0, step, cfg.c1, cfg.c2, cfg.max_line_search)
        n_eval += evals
        if a == 0.0 or g_new is None or not f_new <= f:
            status = "line_search_failed"
            break
        s = a * direction
        y = g_new - g
        sy = float(np.dot(s, y))
        x = x + s
        f, g = float(f_new), g_new
        it += 1
        trace.append(f)
        if sy > 1e-10 * float(np.dot(y, y)):
            S.append(s)
            Y.append(y)
            rho.append(1.0 / sy)
        if callback is not None:
            callback(it, f, g)
        if not ok and not np.max(np.abs(g)) < cfg.gradient_tolerance:
            log.debug("iteration %d: line search accepted a step without the curvature condition", it)

    return LbfgsResult(x, float(f), g, status, it, n_eval, trace)
