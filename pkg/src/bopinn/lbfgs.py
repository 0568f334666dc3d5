"""Limited-memory BFGS with a strong-Wolfe line search.

Two-loop recursion over the most recent curvature pairs, initial Hessian
scaled by s.y / y.y, bracketing + zoom line search with safeguarded cubic
interpolation (Nocedal & Wright, Algorithms 3.5/3.6 and 7.4).
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .field import NumericError

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITERS = "max_iters"
LINE_SEARCH_FAILURE = "line_search_failure"


@dataclass(frozen=True)
class LbfgsOptions:
    memory: int = 10
    max_iters: int = 500
    grad_tol: float = 1e-6
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_line_search_steps: int = 40
    # stop when (f_k - f_{k+1}) / max(|f_k|, |f_{k+1}|, 1) <= f_tol; 0 disables
    f_tol: float = 0.0
    debug: bool = False

    def __post_init__(self):
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise ValueError("need 0 < wolfe_c1 < wolfe_c2 < 1")
        if self.memory < 1 or self.max_iters < 0 or self.max_line_search_steps < 1:
            raise ValueError("memory and max_line_search_steps must be >= 1, max_iters >= 0")


@dataclass
class OptimTrace:
    iterations: int = 0
    loss_history: list = field(default_factory=list)
    terminal_grad_norm: float = math.nan
    termination_reason: str = MAX_ITERS
    n_evals: int = 0


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic through (a, fa, ga), (b, fb, gb), or None."""
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = gb - ga + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (gb + d2 - d1) / denom


def _interpolate(a, fa, ga, b, fb, gb):
    lo, hi = min(a, b), max(a, b)
    width = hi - lo
    x = _cubic_min(a, fa, ga, b, fb, gb)
    # keep the trial point away from the interval ends
    if x is None or not (lo + 0.1 * width <= x <= hi - 0.1 * width):
        x = 0.5 * (lo + hi)
    return x


class _Phi:
    """Objective restricted to the ray x + alpha d, with evaluation cache."""

    def __init__(self, fun, x, d, trace):
        self.fun, self.x, self.d, self.trace = fun, x, d, trace
        self.best = None

    def __call__(self, alpha):
        x = self.x + alpha * self.d
        f, g = self.fun(x)
        self.trace.n_evals += 1
        f = float(f)
        g = np.asarray(g, dtype=np.float64)
        if not math.isfinite(f) or not np.all(np.isfinite(g)):
            return math.inf, None, x, math.nan
        if self.best is None or f < self.best[0]:
            self.best = (f, g, x, alpha)
        return f, g, x, float(g @ self.d)


def strong_wolfe(fun, x, f0, g0, d, alpha0, c1, c2, max_steps, trace):
    """Return ``(alpha, f, g, x_new)`` meeting the strong Wolfe conditions, or None."""
    phi = _Phi(fun, x, d, trace)
    dphi0 = float(g0 @ d)
    a_prev, f_prev, dphi_prev = 0.0, f0, dphi0
    a = alpha0
    steps = 0

    def zoom(a_lo, f_lo, dp_lo, a_hi, f_hi, dp_hi):
        nonlocal steps
        while steps < max_steps:
            if abs(a_hi - a_lo) < 1e-16 * max(1.0, abs(a_lo)):
                break
            a_j = _interpolate(a_lo, f_lo, dp_lo, a_hi, f_hi, dp_hi)
            f_j, g_j, x_j, dp_j = phi(a_j)
            steps += 1
            if f_j > f0 + c1 * a_j * dphi0 or f_j >= f_lo:
                a_hi, f_hi, dp_hi = a_j, f_j, dp_j
                if not math.isfinite(dp_hi):
                    dp_hi = 0.0
            else:
                if abs(dp_j) <= -c2 * dphi0:
                    return a_j, f_j, g_j, x_j
                if dp_j * (a_hi - a_lo) >= 0:
                    a_hi, f_hi, dp_hi = a_lo, f_lo, dp_lo
                a_lo, f_lo, dp_lo = a_j, f_j, dp_j
        return None

    while steps < max_steps:
        f_a, g_a, x_a, dp_a = phi(a)
        steps += 1
        if not math.isfinite(f_a):
            # overshoot into a non-finite region: shrink and retry
            a = 0.5 * (a_prev + a)
            continue
        if f_a > f0 + c1 * a * dphi0 or (steps > 1 and f_a >= f_prev):
            return zoom(a_prev, f_prev, dphi_prev, a, f_a, dp_a)
        if abs(dp_a) <= -c2 * dphi0:
            return a, f_a, g_a, x_a
        if dp_a >= 0:
            return zoom(a, f_a, dp_a, a_prev, f_prev, dphi_prev)
        a_prev, f_prev, dphi_prev = a, f_a, dp_a
        a = 2.0 * a
    return None


def _two_loop(g, pairs, gamma):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        q -= a * y
        alphas.append(a)
    r = gamma * q
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ r)
        r += (a - b) * s
    return -r


def minimize(f_and_grad: Callable, x0, opts: LbfgsOptions = LbfgsOptions()):
    """Minimize ``f_and_grad(x) -> (f, grad)`` from ``x0``.

    Returns ``(x_star, f_star, trace)``. A line-search failure stops early and
    returns the best iterate so far with reason ``line_search_failure``.
    """
    x = np.array(x0, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite starting point", term="x0")
    trace = OptimTrace()
    f, g = f_and_grad(x)
    trace.n_evals += 1
    f = float(f)
    g = np.asarray(g, dtype=np.float64)
    if not math.isfinite(f) or not np.all(np.isfinite(g)):
        raise NumericError(f"non-finite objective at the starting point (f={f})", term="objective")
    trace.loss_history.append(f)
    pairs = deque(maxlen=opts.memory)
    gamma = 1.0

    for it in range(opts.max_iters):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm <= opts.grad_tol:
            trace.termination_reason = CONVERGED
            break
        d = _two_loop(g, pairs, gamma)
        dphi0 = float(g @ d)
        if dphi0 >= 0:
            # lost descent: restart from steepest descent
            pairs.clear()
            d = -g
            dphi0 = float(g @ d)
        alpha0 = 1.0 if pairs else min(1.0, 1.0 / max(gnorm, 1e-300))
        result = strong_wolfe(f_and_grad, x, f, g, d, alpha0, opts.wolfe_c1, opts.wolfe_c2,
                              opts.max_line_search_steps, trace)
        if result is None:
            trace.termination_reason = LINE_SEARCH_FAILURE
            log.debug("line search failed at iteration %d (f=%.3e)", it, f)
            break
        alpha, f_new, g_new, x_new = result
        if opts.debug:
            dphi = float(g_new @ d)
            assert f_new <= f + opts.wolfe_c1 * alpha * dphi0, "sufficient decrease violated"
            assert abs(dphi) <= -opts.wolfe_c2 * dphi0, "curvature condition violated"
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 0:
            pairs.append((s, y, 1.0 / sy))
            gamma = sy / float(y @ y)
        f_prev = f
        x, f, g = x_new, f_new, g_new
        trace.iterations = it + 1
        trace.loss_history.append(f)
        if opts.f_tol > 0 and (f_prev - f) <= opts.f_tol * max(abs(f_prev), abs(f), 1.0):
            trace.termination_reason = CONVERGED
            break
    else:
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        trace.termination_reason = CONVERGED if gnorm <= opts.grad_tol else MAX_ITERS

    trace.terminal_grad_norm = float(np.max(np.abs(g))) if g.size else 0.0
    return x, f, trace
