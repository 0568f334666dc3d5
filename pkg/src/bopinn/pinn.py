"""Collocation sampling, the composite residual/IC/BC loss, and PINN training at fixed c."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import field as nf
from .field import MlpParams, NumericError
from .lbfgs import LbfgsOptions, OptimTrace, minimize
from .wave import DomainError, WaveDomain, _speed

log = logging.getLogger(__name__)

DESK_ARCH = (2, 32, 32, 32, 1)
PAPER_ARCH = (2, 64, 128, 128, 128, 128, 64, 1)


def initial_displacement(x):
    return -np.sin(np.pi * np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class CollocationSet:
    interior: np.ndarray  # (n_f, 2) columns x, t
    initial: np.ndarray   # (n_0,) x at t = 0
    boundary: np.ndarray  # (n_b,) t, used at x = 0 and x = L
    seed: int | None = None
    domain: WaveDomain = field(default_factory=WaveDomain)

    def __post_init__(self):
        interior = np.asarray(self.interior, dtype=np.float64).reshape(-1, 2)
        initial = np.asarray(self.initial, dtype=np.float64).ravel()
        boundary = np.asarray(self.boundary, dtype=np.float64).ravel()
        if min(len(interior), initial.size, boundary.size) == 0:
            raise ValueError("every collocation group needs at least one point")
        L, T = self.domain.L, self.domain.T
        inside = (
            np.all((interior[:, 0] >= 0) & (interior[:, 0] <= L))
            and np.all((interior[:, 1] >= 0) & (interior[:, 1] <= T))
            and np.all((initial >= 0) & (initial <= L))
            and np.all((boundary >= 0) & (boundary <= T))
        )
        if not inside:
            raise DomainError("collocation points outside the domain")
        object.__setattr__(self, "interior", interior)
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "boundary", boundary)

    @property
    def sizes(self):
        return len(self.interior), self.initial.size, self.boundary.size

    def points(self):
        """All evaluation points in loss order: interior, initial, x=0 boundary, x=L boundary."""
        n_b = self.boundary.size
        x = np.concatenate([self.interior[:, 0], self.initial, np.zeros(n_b), np.full(n_b, self.domain.L)])
        t = np.concatenate([self.interior[:, 1], np.zeros(self.initial.size), self.boundary, self.boundary])
        return x, t


def sample_collocation(domain: WaveDomain = WaveDomain(), n_f: int = 2000, n_0: int = 200,
                       n_b: int = 200, seed: int = 0) -> CollocationSet:
    if min(n_f, n_0, n_b) <= 0:
        raise ValueError("collocation counts must be positive")
    rng = np.random.default_rng(seed)
    interior = np.column_stack([rng.uniform(0, domain.L, n_f), rng.uniform(0, domain.T, n_f)])
    initial = rng.uniform(0, domain.L, n_0)
    boundary = rng.uniform(0, domain.T, n_b)
    return CollocationSet(interior, initial, boundary, seed=seed, domain=domain)


@dataclass(frozen=True)
class LossBreakdown:
    j_f: float
    j_0: float
    j_b: float

    @property
    def j_total(self) -> float:
        return self.j_f + self.j_0 + self.j_b

    def as_dict(self):
        return {"j_f": self.j_f, "j_0": self.j_0, "j_b": self.j_b, "j_total": self.j_total}


class PinnLoss:
    """J = J_f + J_0 + J_b for a fixed collocation set and wave speed.

    Interior points carry full jets, initial points only (u, u_t) and boundary
    points only u, since nothing else enters their loss terms.
    """

    def __init__(self, colloc: CollocationSet, c, mask_seed: int | None = None):
        self.colloc = colloc
        self.c = _speed(c)
        self.n_f, self.n_0, self.n_b = colloc.sizes
        n_b, L = self.n_b, colloc.domain.L
        self.blocks = (
            nf.JetBlock(colloc.interior[:, 0], colloc.interior[:, 1], nf.FULL),
            nf.JetBlock(colloc.initial, np.zeros(self.n_0), (nf.VALUE, nf.DT)),
            nf.JetBlock(np.concatenate([np.zeros(n_b), np.full(n_b, L)]),
                        np.concatenate([colloc.boundary, colloc.boundary]), (nf.VALUE,)),
        )
        self.n_points = self.n_f + self.n_0 + 2 * n_b
        self.u0 = initial_displacement(colloc.initial)
        self._rng = np.random.default_rng(mask_seed)
        self._workspace = None

    def workspace(self, params: MlpParams) -> nf.JetWorkspace:
        ws = self._workspace
        if ws is None or ws.layer_sizes != params.layer_sizes:
            ws = self._workspace = nf.JetWorkspace(params.layer_sizes, self.blocks)
        return ws

    def _terms(self, outs):
        """Loss breakdown and per-block output cotangents."""
        interior, initial, boundary = outs
        c2 = self.c * self.c
        resid = c2 * interior[nf.DXX] - interior[nf.DTT]
        ic_u = initial[0] - self.u0
        ic_v = initial[1]
        bc_u = boundary[0]
        with np.errstate(over="ignore", invalid="ignore"):  # reported below as NumericError
            breakdown = LossBreakdown(
                float(np.mean(resid**2)),
                float(np.mean(ic_u**2 + ic_v**2)),
                float(np.sum(bc_u**2) / self.n_b),
            )
        for name, v in (("j_f", breakdown.j_f), ("j_0", breakdown.j_0), ("j_b", breakdown.j_b)):
            if not math.isfinite(v):
                raise NumericError(f"non-finite loss component {name}", term=name)
        cot_f = np.zeros_like(interior)
        cot_f[nf.DXX] = (2.0 * c2 / self.n_f) * resid
        cot_f[nf.DTT] = (-2.0 / self.n_f) * resid
        cot_0 = np.stack([(2.0 / self.n_0) * ic_u, (2.0 / self.n_0) * ic_v])
        cot_b = ((2.0 / self.n_b) * bc_u)[None, :]
        return breakdown, [cot_f, cot_0, cot_b]

    def _block_loss(self, outs):
        breakdown, cots = self._terms(outs)
        return breakdown.j_total, cots

    def loss(self, params: MlpParams, stochastic: bool = False) -> nf.BlockLoss:
        masks = nf.dropout_masks(params, self.n_points, self._rng) if stochastic else None
        return nf.BlockLoss(self.workspace(params), self._block_loss, masks)

    def breakdown(self, params: MlpParams) -> LossBreakdown:
        """Deterministic (dropout-free) loss components."""
        outs = nf._jet_forward(params, nf.JetWorkspace(params.layer_sizes, self.blocks))
        nf._check_finite(outs)
        return self._terms(outs)[0]

    def objective(self, template: MlpParams):
        """``theta -> (J, dJ/dtheta)`` for the optimizer; dropout masks resampled per call."""
        stochastic = template.dropout_rate > 0

        def f_and_grad(theta):
            params = template.unflatten(theta)
            return nf.loss_grad(params, self.loss(params, stochastic))

        return f_and_grad


def pinn_loss(params: MlpParams, colloc: CollocationSet, c) -> LossBreakdown:
    return PinnLoss(colloc, c).breakdown(params)


@dataclass
class TrainedField:
    params: MlpParams
    c: float
    final_loss: LossBreakdown
    trace: OptimTrace
    domain: WaveDomain = field(default_factory=WaveDomain)
    seed: int | None = None
    colloc_seed: int | None = None

    def metadata(self):
        return {
            "c": self.c,
            "seed": self.seed,
            "colloc_seed": self.colloc_seed,
            "L": self.domain.L,
            "T": self.domain.T,
            "loss": self.final_loss.as_dict(),
            "iterations": self.trace.iterations,
            "termination_reason": self.trace.termination_reason,
        }


def train_pinn(c, colloc: CollocationSet, arch=DESK_ARCH, opts: LbfgsOptions = LbfgsOptions(),
               seed: int = 0, dropout_rate: float = 0.0, init: MlpParams | None = None) -> TrainedField:
    """Fit the network to the wave problem at speed ``c`` by full-batch L-BFGS.

    ``init`` warm-starts from existing parameters instead of a fresh seeded
    initialization.
    """
    c = _speed(c)
    if init is None:
        params = nf.init_params(arch, "tanh", dropout_rate, seed)
    else:
        params = init
    loss = PinnLoss(colloc, c, mask_seed=seed)
    theta, _, trace = minimize(loss.objective(params), params.flatten(), opts)
    trained = params.unflatten(theta)
    final = loss.breakdown(trained)
    log.debug("c=%.4f iters=%d J=%.3e (%s)", c, trace.iterations, final.j_total, trace.termination_reason)
    return TrainedField(trained, c, final, trace, colloc.domain, seed, colloc.seed)


def eval_field(trained: TrainedField | MlpParams, xs, t_obs: float):
    params = trained.params if isinstance(trained, TrainedField) else trained
    xs = np.asarray(xs, dtype=np.float64)
    return np.asarray(nf.forward(params, xs, np.full_like(xs, t_obs)))


def relative_l2_error(trained: TrainedField, n_x: int = 101, n_t: int = 101) -> float:
    """||u_net - u_exact|| / ||u_exact|| on a uniform n_x x n_t grid."""
    from .wave import analytic_u

    d = trained.domain
    X, Tg = np.meshgrid(np.linspace(0, d.L, n_x), np.linspace(0, d.T, n_t), indexing="ij")
    exact = analytic_u(X, Tg, trained.c, d)
    approx = nf.forward(trained.params, X, Tg)
    return float(np.linalg.norm(approx - exact) / np.linalg.norm(exact))
