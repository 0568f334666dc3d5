"""Gaussian-process regression over a scalar input with an RBF kernel.

Targets are standardized inside :func:`fit` (zero prior mean on the
standardized scale) unless ``normalize=False``. Hyperparameters are either
fixed or chosen by maximizing the log marginal likelihood (ML-II) with
multi-start L-BFGS in a bounded log-parameter space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from .lbfgs import LbfgsOptions, minimize

JITTER = 1e-10
MAX_JITTER = 1e-4

# ML-II search box for (signal variance, length scale, noise variance); the
# length-scale range suits inputs spread over an O(1) interval.
HYPER_BOUNDS = ((1e-3, 1e3), (1e-2, 1e1), (JITTER, 1.0))


class SingularModelError(np.linalg.LinAlgError):
    """Covariance matrix stayed non positive definite after jitter escalation."""


@dataclass(frozen=True)
class GprHyper:
    signal_variance: float = 1.0
    length_scale: float = 0.1
    noise_variance: float = JITTER

    def __post_init__(self):
        if not (self.signal_variance > 0 and self.length_scale > 0):
            raise ValueError("signal variance and length scale must be positive")
        if not all(map(math.isfinite, (self.signal_variance, self.length_scale, self.noise_variance))):
            raise ValueError("hyperparameters must be finite")
        if self.noise_variance < JITTER:
            object.__setattr__(self, "noise_variance", JITTER)

    def as_log(self):
        return np.log([self.signal_variance, self.length_scale, self.noise_variance])


def rbf_kernel(c1, c2, hyper: GprHyper):
    """sigma_f^2 exp(-(c1 - c2)^2 / (2 l^2)), broadcasting over the inputs."""
    d = np.asarray(c1, dtype=np.float64) - np.asarray(c2, dtype=np.float64)
    k = hyper.signal_variance * np.exp(-0.5 * (d / hyper.length_scale) ** 2)
    return float(k) if np.ndim(k) == 0 else k


def kernel_matrix(a, b, hyper: GprHyper):
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    return rbf_kernel(a[:, None], b[None, :], hyper)


@dataclass(frozen=True)
class GprModel:
    train_x: np.ndarray
    train_y: np.ndarray   # raw targets
    hyper: GprHyper
    chol: np.ndarray      # lower Cholesky factor of K + noise I
    alpha: np.ndarray     # (K + noise I)^-1 y_std
    y_mean: float = 0.0
    y_scale: float = 1.0
    jitter: float = 0.0   # extra diagonal added beyond hyper.noise_variance

    @property
    def y_standardized(self):
        return (self.train_y - self.y_mean) / self.y_scale

    def covariance(self):
        n = self.train_x.size
        return kernel_matrix(self.train_x, self.train_x, self.hyper) + (
            self.hyper.noise_variance + self.jitter) * np.eye(n)


def _cholesky(K, noise):
    n = K.shape[0]
    extra = 0.0
    while True:
        try:
            return cholesky(K + (noise + extra) * np.eye(n), lower=True), extra
        except LinAlgError:
            extra = max(10.0 * extra, 10.0 * max(noise, JITTER))
            if noise + extra > MAX_JITTER:
                raise SingularModelError(f"covariance not positive definite with jitter {noise + extra:.1e}")


def _standardize(y, normalize):
    if not normalize:
        return 0.0, 1.0
    mean = float(np.mean(y))
    scale = float(np.std(y)) if y.size >= 2 else 1.0
    return mean, (scale if scale > 0 else 1.0)


def _build(x, y, hyper, normalize):
    y_mean, y_scale = _standardize(y, normalize)
    ys = (y - y_mean) / y_scale
    chol, extra = _cholesky(kernel_matrix(x, x, hyper), hyper.noise_variance)
    alpha = cho_solve((chol, True), ys)
    return GprModel(x, y, hyper, chol, alpha, y_mean, y_scale, extra)


def _box_to_log(z):
    """Map unconstrained z to log-hyperparameters inside HYPER_BOUNDS, with Jacobian."""
    lo = np.log([b[0] for b in HYPER_BOUNDS])
    hi = np.log([b[1] for b in HYPER_BOUNDS])
    s = 0.5 * (1.0 + np.tanh(0.5 * z))  # logistic, overflow-free
    return lo + (hi - lo) * s, (hi - lo) * s * (1.0 - s)


def _log_to_box(logp):
    lo = np.log([b[0] for b in HYPER_BOUNDS])
    hi = np.log([b[1] for b in HYPER_BOUNDS])
    s = np.clip((np.asarray(logp) - lo) / (hi - lo), 1e-6, 1 - 1e-6)
    return np.log(s / (1.0 - s))


def _neg_lml_and_grad(z, x, ys, d2):
    logp, jac = _box_to_log(z)
    sf2, ell, sn2 = np.exp(logp)
    Kf = sf2 * np.exp(-0.5 * d2 / ell**2)
    n = x.size
    K = Kf.copy()
    K.flat[:: n + 1] += sn2
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return math.inf, np.zeros(3)
    Linv = solve_triangular(L, np.eye(n), lower=True, check_finite=False)
    Kinv = Linv.T @ Linv
    alpha = Kinv @ ys
    nll = 0.5 * ys @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * n * math.log(2 * math.pi)
    W = np.outer(alpha, alpha) - Kinv
    WKf = W * Kf
    # d/d log(param) of the negative log marginal likelihood
    grad = -0.5 * np.array([WKf.sum(), (WKf * d2).sum() / ell**2, sn2 * np.trace(W)])
    return float(nll), grad * jac


def fit(train_x, train_y, hyper: GprHyper | str = "ml2", normalize: bool = True,
        restarts: int = 5, seed: int = 0) -> GprModel:
    """Condition a GP on ``(train_x, train_y)``.

    ``hyper`` is a fixed :class:`GprHyper` or ``"ml2"`` to maximize the log
    marginal likelihood from ``restarts`` deterministic starting points.
    """
    x = np.atleast_1d(np.asarray(train_x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(train_y, dtype=np.float64))
    if x.ndim != 1 or x.shape != y.shape or x.size == 0:
        raise ValueError("need matching non-empty 1D train_x and train_y")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("training data must be finite")
    if isinstance(hyper, GprHyper):
        return _build(x, y, hyper, normalize)
    if hyper != "ml2":
        raise ValueError(f"unknown hyperparameter mode {hyper!r}")

    y_mean, y_scale = _standardize(y, normalize)
    ys = (y - y_mean) / y_scale
    rng = np.random.default_rng(seed)
    starts = [_log_to_box(GprHyper(1.0, 0.1, 1e-6).as_log())]
    starts += [rng.normal(0.0, 2.0, size=3) for _ in range(max(restarts, 1) - 1)]
    opts = LbfgsOptions(max_iters=50, grad_tol=1e-4, f_tol=1e-6, max_line_search_steps=10)
    d2 = (x[:, None] - x[None, :]) ** 2
    best = None
    for z0 in starts:
        f0, _ = _neg_lml_and_grad(z0, x, ys, d2)
        if not math.isfinite(f0):
            continue
        z, f, _ = minimize(lambda z: _neg_lml_and_grad(z, x, ys, d2), z0, opts)
        if best is None or f < best[0]:
            best = (f, z)
    if best is None:
        raise SingularModelError("no ML-II restart produced a positive definite covariance")
    sf2, ell, sn2 = np.exp(_box_to_log(best[1])[0])
    return _build(x, y, GprHyper(sf2, ell, sn2), normalize)


def predict(model: GprModel, c):
    """Posterior mean and standard deviation at ``c`` (scalar or array)."""
    q = np.asarray(c, dtype=np.float64)
    qa = np.atleast_1d(q).ravel()
    ks = kernel_matrix(model.train_x, qa, model.hyper)      # (n, m)
    mean = ks.T @ model.alpha
    v = solve_triangular(model.chol, ks, lower=True)
    var = model.hyper.signal_variance - np.sum(v * v, axis=0)
    std = np.sqrt(np.maximum(var, 0.0))
    mean = model.y_mean + model.y_scale * mean
    std = model.y_scale * std
    if q.ndim == 0:
        return float(mean[0]), float(std[0])
    return mean.reshape(q.shape), std.reshape(q.shape)


def log_marginal_likelihood(model: GprModel) -> float:
    """log p(y | x, hyper) of the (standardized) targets the model was conditioned on."""
    ys = model.y_standardized
    n = ys.size
    return float(-0.5 * ys @ model.alpha - np.sum(np.log(np.diag(model.chol))) - 0.5 * n * math.log(2 * math.pi))
