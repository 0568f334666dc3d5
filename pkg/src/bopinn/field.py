"""Dense tanh network u(x, t) with exact second derivatives and parameter gradients.

Derivatives with respect to the two inputs are carried forward as univariate
2-jets along the x and t directions. Every layer therefore maps a stacked array
of shape ``(5, n_points, width)`` holding the channels

    0: value   1: d/dx   2: d/dt   3: d2/dx2   4: d2/dt2

Parameter gradients of any scalar built from those channels are obtained by
running the jet computation backwards (reverse accumulation), so the residual
loss never needs finite differences or a general-purpose autodiff library.

Flat parameter order: for each layer k in turn, ``weights[k]`` row-major
(shape ``out x in``) followed by ``biases[k]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ._jetops import tanh_jet_backward, tanh_jet_forward

VALUE, DX, DT, DXX, DTT = range(5)
ACTIVATIONS = ("tanh", "identity")


class NumericError(FloatingPointError):
    """A loss or network output became non-finite."""

    def __init__(self, message: str, term: str | None = None):
        super().__init__(message)
        self.term = term


@dataclass(frozen=True)
class MlpParams:
    layer_sizes: tuple
    weights: tuple
    biases: tuple
    activation: str = "tanh"
    dropout_rate: float = 0.0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        _check_sizes(sizes)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("one weight matrix and bias vector per layer required")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[k + 1], sizes[k]) or b.shape != (sizes[k + 1],):
                raise ValueError(f"layer {k}: got W{w.shape}, b{b.shape}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b]
        return np.concatenate(parts)

    def unflatten(self, theta) -> "MlpParams":
        """New parameters of the same architecture from a flat vector (views into ``theta``)."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
        weights, biases = [], []
        i = 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            weights.append(theta[i:i + n_in * n_out].reshape(n_out, n_in))
            i += n_in * n_out
            biases.append(theta[i:i + n_out])
            i += n_out
        return MlpParams(self.layer_sizes, tuple(weights), tuple(biases), self.activation, self.dropout_rate)

    def scaled_output(self, alpha: float) -> "MlpParams":
        weights = self.weights[:-1] + (alpha * self.weights[-1],)
        biases = self.biases[:-1] + (alpha * self.biases[-1],)
        return MlpParams(self.layer_sizes, weights, biases, self.activation, self.dropout_rate)


def _check_sizes(sizes):
    if len(sizes) < 2 or sizes[0] != 2 or sizes[-1] != 1 or min(sizes) < 1:
        raise ValueError(f"layer sizes must start at 2, end at 1 and be positive, got {list(sizes)}")


def init_params(layer_sizes: Sequence[int], activation: str = "tanh", dropout_rate: float = 0.0,
                seed: int = 0) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    sizes = tuple(int(s) for s in layer_sizes)
    _check_sizes(sizes)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MlpParams(sizes, tuple(weights), tuple(biases), activation, dropout_rate)


@dataclass
class Jet2:
    """Value and the four pure input derivatives at a batch of points."""

    value: np.ndarray
    d_x: np.ndarray
    d_t: np.ndarray
    d_xx: np.ndarray
    d_tt: np.ndarray

    @classmethod
    def from_stack(cls, stack) -> "Jet2":
        return cls(*(stack[i] for i in range(5)))

    def stack(self) -> np.ndarray:
        return np.stack([self.value, self.d_x, self.d_t, self.d_xx, self.d_tt])

    @classmethod
    def zeros(cls, n: int) -> "Jet2":
        return cls(*(np.zeros(n) for _ in range(5)))


def _as_points(x, t):
    x, t = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(t, dtype=np.float64))
    return x.ravel(), t.ravel(), x.shape


def forward(params: MlpParams, x, t):
    """Deterministic network output at (x, t); dropout is never applied here."""
    xf, tf, shape = _as_points(x, t)
    h = np.stack([xf, tf], axis=1)
    last = params.n_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if k < last and params.activation == "tanh":
            h = np.tanh(h)
    out = h[:, 0]
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite network output", term="forward")
    out = out.reshape(shape)
    return float(out) if out.ndim == 0 else out


def dropout_masks(params: MlpParams, n_points: int, rng: np.random.Generator):
    """Inverted-dropout masks (kept units scaled by 1/(1-p)) for every hidden layer."""
    p = params.dropout_rate
    if p == 0.0:
        return None
    return [
        (rng.random((n_points, width)) >= p) / (1.0 - p)
        for width in params.layer_sizes[1:-1]
    ]


FULL = (VALUE, DX, DT, DXX, DTT)
_CHANNEL_SETS = (FULL, (VALUE, DX), (VALUE, DT), (VALUE,))


@dataclass(frozen=True)
class JetBlock:
    """A batch of points whose jets carry only ``channels``.

    Points that enter a loss through u or one first derivative alone do not
    need the full jet; carrying fewer channels shrinks every matmul.
    """

    x: np.ndarray
    t: np.ndarray
    channels: tuple = FULL

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float64).ravel()
        t = np.ascontiguousarray(self.t, dtype=np.float64).ravel()
        if x.shape != t.shape:
            raise ValueError("block x and t must have the same length")
        channels = tuple(self.channels)
        if channels not in _CHANNEL_SETS:
            raise ValueError(f"unsupported channel set {channels}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "xt", np.stack([x, t], axis=1))

    @property
    def n_points(self):
        return self.x.size


class JetWorkspace:
    """Preallocated per-layer buffers for a fixed list of point blocks.

    Each layer's jets for all blocks share one ``(rows, width)`` array, so an
    affine map is a single BLAS call; block ``i`` occupies ``len(channels) *
    n_points`` consecutive rows. Reusing the buffers across optimizer
    iterations avoids re-faulting fresh memory on every loss evaluation. The
    workspace doubles as the tape of the reverse pass and must not be shared
    between concurrent evaluations.
    """

    def __init__(self, layer_sizes, blocks):
        self.layer_sizes = tuple(layer_sizes)
        self.blocks = tuple(blocks)
        self._rows, self._points = [], []
        r = p = 0
        for blk in self.blocks:
            k, n = len(blk.channels), blk.n_points
            self._rows.append((r, k, n))
            self._points.append(slice(p, p + n))
            r += k * n
            p += n
        self.n_rows, self.n_points = r, p
        widths = self.layer_sizes[1:]
        self.z = [np.zeros((r, w)) for w in widths]
        self.h = [np.empty((r, w)) for w in widths]
        self.zbar = [np.empty((r, w)) for w in widths]
        self.hbar = [np.empty((r, w)) for w in widths]
        self.a = [[np.empty((blk.n_points, w)) for blk in self.blocks] for w in widths]
        self.masked = [None] * len(widths)
        self._use_mask = [False] * len(widths)

    @classmethod
    def full(cls, layer_sizes, x, t):
        return cls(layer_sizes, [JetBlock(x, t, FULL)])

    def view(self, arr, i):
        """Block ``i`` of a layer buffer as ``(channels, points, width)``."""
        r, k, n = self._rows[i]
        return arr[r:r + k * n].reshape(k, n, arr.shape[1])

    def layer_input(self, k):
        return self.masked[k - 1] if self._use_mask[k - 1] else self.h[k - 1]


def _affine(k, w, b, ws: JetWorkspace):
    """Jet of W h + b into ``ws.z[k]``. The input layer is done in closed form:
    its jet is (x, t) with unit first derivatives and zero curvature."""
    z = ws.z[k]
    if k == 0:
        for i, blk in enumerate(ws.blocks):
            zb = ws.view(z, i)
            np.matmul(blk.xt, w.T, out=zb[0])
            for s, ch in enumerate(blk.channels[1:], 1):
                zb[s] = w[:, 0] if ch == DX else w[:, 1] if ch == DT else 0.0
    else:
        h = ws.layer_input(k)
        if w.shape[0] == 1:
            np.matmul(h, w[0], out=z.reshape(-1))
        else:
            np.matmul(h, w.T, out=z)
    for i in range(len(ws.blocks)):
        ws.view(z, i)[0] += b
    return z


def _activate(k, params: MlpParams, ws: JetWorkspace, masks):
    z, h = ws.z[k], ws.h[k]
    for i in range(len(ws.blocks)):
        zb, hb = ws.view(z, i), ws.view(h, i)
        if params.activation == "identity":
            hb[...] = zb
        else:
            a = ws.a[k][i]
            np.tanh(zb[0], out=a)
            tanh_jet_forward(zb, a, hb)
    ws._use_mask[k] = masks is not None
    if masks is not None:
        if ws.masked[k] is None:
            ws.masked[k] = np.empty_like(h)
        for i in range(len(ws.blocks)):
            np.multiply(ws.view(h, i), masks[k][ws._points[i]], out=ws.view(ws.masked[k], i))


def _jet_forward(params: MlpParams, ws: JetWorkspace, masks=None):
    """Output jets per block, each ``(channels, points)`` (views into the workspace)."""
    if ws.layer_sizes != params.layer_sizes:
        raise ValueError("workspace built for a different architecture")
    last = params.n_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = _affine(k, w, b, ws)
        if k < last:
            _activate(k, params, ws, masks)
    return [ws.view(z, i)[:, :, 0] for i in range(len(ws.blocks))]


def _jet_backward(params: MlpParams, ws: JetWorkspace, cots, masks=None) -> np.ndarray:
    """Flat parameter gradient given per-block cotangents of the output jets."""
    grads = []
    last = params.n_layers - 1
    nb = len(ws.blocks)
    for k in range(last, -1, -1):
        w = params.weights[k]
        n_out = w.shape[0]
        zbar = ws.zbar[k]
        gb = np.zeros(n_out)
        if k == last:
            for i, c in enumerate(cots):
                ws.view(zbar, i)[:, :, 0] = c
                gb += c[0].sum()
        else:
            hbar = ws.hbar[k]
            for i in range(nb):
                hb, zb_bar = ws.view(hbar, i), ws.view(zbar, i)
                if masks is not None:
                    hb *= masks[k][ws._points[i]]
                if params.activation == "identity":
                    zb_bar[...] = hb
                    gb += hb[0].sum(axis=0)
                else:
                    tanh_jet_backward(hb, ws.view(ws.z[k], i), ws.a[k][i], zb_bar, gb)
        if k == 0:
            gw = np.zeros((n_out, 2))
            for i, blk in enumerate(ws.blocks):
                zb = ws.view(zbar, i)
                gw += zb[0].T @ blk.xt
                for s, ch in enumerate(blk.channels[1:], 1):
                    if ch in (DX, DT):
                        gw[:, ch - DX] += zb[s].sum(axis=0)
        else:
            h_in = ws.layer_input(k)
            if n_out == 1:
                gw = (zbar[:, 0] @ h_in)[None, :]
                np.multiply.outer(zbar[:, 0], w[0], out=ws.hbar[k - 1])
            else:
                gw = zbar.T @ h_in
                np.matmul(zbar, w, out=ws.hbar[k - 1])
        grads.append((gw, gb))
    parts = []
    for gw, gb in reversed(grads):
        parts += [gw.ravel(), gb]
    return np.concatenate(parts)


def forward_jet2(params: MlpParams, x, t, masks=None) -> Jet2:
    """Value plus u_x, u_t, u_xx, u_tt at every point (flattened batch)."""
    xf, tf, _ = _as_points(x, t)
    out = _jet_forward(params, JetWorkspace.full(params.layer_sizes, xf, tf), masks)[0].copy()
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite network jet", term="forward_jet2")
    return Jet2.from_stack(out)


# A pointwise loss sees the network only through its jets at fixed points and
# returns (loss, cotangent jet). An optional ``direct`` term covers losses that
# also depend on the raw parameter vector (e.g. weight penalties).
JetLossFn = Callable[[Jet2], "tuple[float, Jet2]"]


@dataclass
class PointwiseLoss:
    x: np.ndarray
    t: np.ndarray
    fn: JetLossFn
    direct: Callable[[np.ndarray], "tuple[float, np.ndarray]"] | None = None
    masks: list | None = field(default=None, repr=False)
    workspace: JetWorkspace | None = field(default=None, repr=False)


@dataclass
class BlockLoss:
    """Loss over a blocked workspace: ``fn(outputs) -> (value, cotangents)``,
    both lists aligned with ``workspace.blocks``."""

    workspace: JetWorkspace
    fn: Callable[[list], "tuple[float, list]"]
    masks: list | None = field(default=None, repr=False)


def _check_finite(outs):
    if not all(np.all(np.isfinite(o)) for o in outs):
        raise NumericError("non-finite network jet", term="forward_jet2")


def loss_grad(params: MlpParams, loss: PointwiseLoss | BlockLoss | Callable):
    """Return ``(value, flat_gradient)`` of a scalar loss over the network.

    ``loss`` is a :class:`PointwiseLoss`, a :class:`BlockLoss`, or a callable
    ``params -> loss`` (so the evaluator may depend on the parameters, e.g. to
    draw dropout masks).
    """
    if not isinstance(loss, (PointwiseLoss, BlockLoss)):
        loss = loss(params)
    if isinstance(loss, BlockLoss):
        outs = _jet_forward(params, loss.workspace, loss.masks)
        _check_finite(outs)
        value, cots = loss.fn(outs)
        grad = _jet_backward(params, loss.workspace, cots, loss.masks)
        direct = None
    else:
        grad = np.zeros(params.n_params)
        value = 0.0
        x = np.asarray(loss.x, dtype=np.float64).ravel()
        t = np.asarray(loss.t, dtype=np.float64).ravel()
        if x.size:
            ws = loss.workspace
            if ws is None or ws.layer_sizes != params.layer_sizes or ws.n_points != x.size:
                ws = JetWorkspace.full(params.layer_sizes, x, t)
            outs = _jet_forward(params, ws, loss.masks)
            _check_finite(outs)
            value, cot = loss.fn(Jet2.from_stack(outs[0]))
            grad += _jet_backward(params, ws, [cot.stack()], loss.masks)
        direct = loss.direct
    if direct is not None:
        dv, dg = direct(params.flatten())
        value += dv
        grad += dg
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss value {value}", term="loss")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite loss gradient", term="gradient")
    return float(value), grad


# -- serialization ---------------------------------------------------------------

def save_params(params: MlpParams, path, metadata: dict | None = None) -> Path:
    """Write ``path`` (.npy flat vector) and ``path.json`` sidecar (architecture + metadata)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.save(path.with_suffix(".npy"), params.flatten())
    header = {
        "layer_sizes": list(params.layer_sizes),
        "activation": params.activation,
        "dropout_rate": params.dropout_rate,
        "order": "per layer: weights (out x in, row-major), then biases",
        "metadata": metadata or {},
    }
    path.with_suffix(".json").write_text(json.dumps(header, indent=2), encoding="utf-8")
    return path.with_suffix(".npy")


def load_params(path):
    """Inverse of :func:`save_params`; returns ``(params, metadata)``."""
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    theta = np.load(path.with_suffix(".npy"))
    template = init_params(header["layer_sizes"], header["activation"], header["dropout_rate"])
    return template.unflatten(theta), header["metadata"]
