"""Bayesian optimization of the snapshot misfit over the wave speed.

The target is g(c) = -mean_i (u_model(x_i, t_obs; c) - u_obs(x_i))^2, which is
maximized over an interval with a GP surrogate and the UCB acquisition
mu(c) + kappa * sigma(c), maximized on a dense grid.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import gp
from .lbfgs import LbfgsOptions
from .pinn import DESK_ARCH, CollocationSet, eval_field, train_pinn
from .wave import Snapshot, analytic_u

log = logging.getLogger(__name__)

DUPLICATE_TOL = 1e-6
MEMO_TOL = 1e-9


class TargetEvaluationError(RuntimeError):
    def __init__(self, c: float, cause: Exception):
        super().__init__(f"target evaluation failed at c={c}: {cause}")
        self.c = c
        self.cause = cause


@dataclass(frozen=True)
class BoConfig:
    bounds: tuple = (0.1, 1.0)
    n_init: int = 5
    n_iters: int = 50
    kappa: float = 2.45
    acq_grid: int = 1001
    seed: int = 0
    gp_restarts: int = 5

    def __post_init__(self):
        lo, hi = self.bounds
        if not lo < hi:
            raise ValueError(f"empty search interval {self.bounds}")
        if self.n_init < 1 or self.n_iters < 0 or self.kappa < 0 or self.acq_grid < 2:
            raise ValueError("need n_init >= 1, n_iters >= 0, kappa >= 0, acq_grid >= 2")

    def grid(self):
        return np.linspace(self.bounds[0], self.bounds[1], self.acq_grid)


@dataclass
class BoTrace:
    queried_c: list = field(default_factory=list)
    queried_g: list = field(default_factory=list)
    incumbent_c: list = field(default_factory=list)
    incumbent_g: list = field(default_factory=list)
    failed: list = field(default_factory=list)
    n_evaluations: int = 0

    def append(self, c: float, g: float, failed: bool = False):
        self.queried_c.append(float(c))
        self.queried_g.append(float(g))
        self.failed.append(failed)
        if not self.incumbent_g or g > self.incumbent_g[-1]:
            self.incumbent_c.append(float(c))
            self.incumbent_g.append(float(g))
        else:
            self.incumbent_c.append(self.incumbent_c[-1])
            self.incumbent_g.append(self.incumbent_g[-1])

    @property
    def best(self):
        """(g*, c*) of the run."""
        return self.incumbent_g[-1], self.incumbent_c[-1]

    def __len__(self):
        return len(self.queried_c)


# -- forward models and target ---------------------------------------------------

class AnalyticForward:
    """Closed-form displacement; isolates the optimizer from PINN error."""

    name = "analytic"

    def snapshot(self, c: float, obs: Snapshot):
        return analytic_u(obs.xs, obs.t_obs, c, obs.domain)


@dataclass
class PinnForward:
    """Train a fresh network at every queried c and read it at the snapshot time.

    With ``warm_start`` the previous trained parameters seed the next fit.
    """

    colloc: CollocationSet
    arch: tuple = DESK_ARCH
    opts: LbfgsOptions = field(default_factory=LbfgsOptions)
    seed: int = 0
    dropout_rate: float = 0.0
    warm_start: bool = False
    on_trained: Callable | None = None
    name: str = "pinn"
    _last: object = field(default=None, repr=False)

    def snapshot(self, c: float, obs: Snapshot):
        init = self._last.params if (self.warm_start and self._last is not None) else None
        trained = train_pinn(c, self.colloc, self.arch, self.opts, self.seed, self.dropout_rate, init=init)
        self._last = trained
        if self.on_trained is not None:
            self.on_trained(trained)
        return eval_field(trained, obs.xs, obs.t_obs)


def target_function(c: float, obs: Snapshot, forward=None) -> float:
    """Negative mean squared misfit between modelled and observed snapshots."""
    forward = forward or AnalyticForward()
    try:
        model = np.asarray(forward.snapshot(float(c), obs), dtype=np.float64)
    except (ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        raise TargetEvaluationError(float(c), exc) from exc
    return -float(np.mean((model - obs.us) ** 2))


def ucb(mean, std, kappa: float):
    return mean + kappa * std


def argmax_acquisition(model: gp.GprModel, cfg: BoConfig, queried=()):
    """Grid point maximizing UCB, skipping points within 1e-6 of earlier queries.

    Ties go to the smallest c.
    """
    grid = cfg.grid()
    mean, std = gp.predict(model, grid)
    acq = ucb(mean, std, cfg.kappa)
    order = np.argsort(-acq, kind="stable")
    queried = np.asarray(list(queried), dtype=np.float64)
    if queried.size == 0:
        return float(grid[order[0]])
    for i in order:
        if np.min(np.abs(queried - grid[i])) > DUPLICATE_TOL:
            return float(grid[i])
    return float(grid[order[0]])


def run_bo(target: Callable[[float], float], cfg: BoConfig = BoConfig(), hyper="ml2",
           callback: Callable | None = None) -> BoTrace:
    """Algorithm: random initial design, then ``n_iters`` GP-UCB proposals.

    A target that raises records g = -inf for that c; such points are kept in
    the trace but left out of the GP data.
    """
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.bounds
    trace = BoTrace()
    memo: dict[float, float] = {}

    def evaluate(c):
        for prev, g in memo.items():
            if abs(prev - c) <= MEMO_TOL:
                trace.append(c, g, failed=not math.isfinite(g))
                return
        try:
            g = float(target(c))
            failed = not math.isfinite(g)
        except (TargetEvaluationError, ArithmeticError, np.linalg.LinAlgError) as exc:
            log.warning("target failed at c=%.6f: %s", c, exc)
            g, failed = -math.inf, True
        trace.n_evaluations += 1
        memo[c] = g
        trace.append(c, g, failed)
        if callback is not None:
            callback(len(trace) - 1, c, g)

    for c in rng.uniform(lo, hi, cfg.n_init):
        evaluate(float(c))
    for _ in range(cfg.n_iters):
        ok = [i for i, g in enumerate(trace.queried_g) if math.isfinite(g)]
        if not ok:
            c_next = float(rng.uniform(lo, hi))
        else:
            xs = np.array([trace.queried_c[i] for i in ok])
            ys = np.array([trace.queried_g[i] for i in ok])
            model = gp.fit(xs, ys, hyper, restarts=cfg.gp_restarts, seed=cfg.seed)
            c_next = argmax_acquisition(model, cfg, trace.queried_c)
        evaluate(c_next)
    return trace


def write_trace(trace: BoTrace, path, metadata: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        for k, v in (metadata or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh)
        w.writerow(["iteration", "c", "g", "incumbent_c", "incumbent_g"])
        for i in range(len(trace)):
            w.writerow([i, repr(trace.queried_c[i]), repr(trace.queried_g[i]),
                        repr(trace.incumbent_c[i]), repr(trace.incumbent_g[i])])
    return path


def read_trace(path) -> BoTrace:
    trace = BoTrace()
    with open(path, encoding="utf-8") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in rows:
            g = float(row["g"])
            trace.append(float(row["c"]), g, failed=not math.isfinite(g))
    trace.n_evaluations = len(trace)
    return trace
