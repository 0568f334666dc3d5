"""Analytical standing-wave solution, synthetic snapshots and SNR-calibrated noise.

The scaled 1D problem is

    u_xx = u_tt / c^2,   x in [0, L], t in [0, T]
    u(x, 0) = -sin(pi x),  u_t(x, 0) = 0,  u(0, t) = u(L, t) = 0

whose separable solution is u(x, t) = -sin(pi x) cos(pi c t).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

#: physical velocity (m/s) = VELOCITY_SCALE * scaled velocity
VELOCITY_SCALE = 10000.0
C_MIN, C_MAX = 0.1, 1.0


class DomainError(ValueError):
    """Raised when a point falls outside the space-time box."""


@dataclass(frozen=True)
class WaveDomain:
    L: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        if not (self.L > 0 and self.T > 0):
            raise ValueError(f"domain extents must be positive, got L={self.L}, T={self.T}")


@dataclass(frozen=True)
class WaveSpeed:
    c_scaled: float

    def __post_init__(self):
        if not (C_MIN <= self.c_scaled <= C_MAX):
            raise ValueError(f"scaled wave speed {self.c_scaled} outside [{C_MIN}, {C_MAX}]")

    @property
    def c_physical(self) -> float:
        return VELOCITY_SCALE * self.c_scaled

    @classmethod
    def from_physical(cls, c_physical: float) -> "WaveSpeed":
        return cls(c_physical / VELOCITY_SCALE)


def _speed(c) -> float:
    return c.c_scaled if isinstance(c, WaveSpeed) else float(c)


def analytic_u(x, t, c, domain: WaveDomain = WaveDomain()):
    """Exact displacement at (x, t); scalars or broadcastable arrays."""
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any((x < 0) | (x > domain.L)) or np.any((t < 0) | (t > domain.T)):
        raise DomainError(f"point outside [0, {domain.L}] x [0, {domain.T}]")
    u = -np.sin(np.pi * x) * np.cos(np.pi * _speed(c) * t)
    # sin(pi L) is ~1e-16 rather than 0 in floating point; pin the Dirichlet ends exactly.
    u = np.where((x == 0.0) | (x == domain.L), 0.0, u)
    return float(u) if u.ndim == 0 else u


def signal_power(signal) -> float:
    signal = np.asarray(signal, dtype=np.float64)
    return float(np.mean(signal**2))


def empirical_snr_db(clean, noisy) -> float:
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noisy, dtype=np.float64) - clean
    return 10.0 * math.log10(signal_power(clean) / signal_power(noise))


def add_noise(signal, snr_db: float, seed: int):
    """Add white Gaussian noise so that 10 log10(P_signal / P_noise) = snr_db.

    ``snr_db = inf`` returns an unmodified copy.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.size == 0:
        raise ValueError("signal is empty")
    if math.isinf(snr_db) and snr_db > 0:
        return signal.copy()
    if not math.isfinite(snr_db):
        raise ValueError(f"invalid SNR {snr_db}")
    power = signal_power(signal)
    if power == 0.0:
        raise ValueError("signal has zero power; noise level for a finite SNR is undefined")
    variance = power / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(seed)
    return signal + rng.normal(0.0, math.sqrt(variance), size=signal.shape)


@dataclass(frozen=True)
class Snapshot:
    t_obs: float
    xs: np.ndarray
    us: np.ndarray
    snr_db: float = math.inf
    seed: int | None = None
    c_true: float | None = None
    domain: WaveDomain = field(default_factory=WaveDomain)

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=np.float64)
        us = np.asarray(self.us, dtype=np.float64)
        if xs.ndim != 1 or xs.shape != us.shape or xs.size < 2:
            raise ValueError("snapshot needs matching 1D xs/us with at least two sensors")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("sensor positions must be strictly increasing")
        if xs[0] < 0 or xs[-1] > self.domain.L:
            raise DomainError("sensor positions outside [0, L]")
        if not (0 <= self.t_obs <= self.domain.T):
            raise DomainError(f"t_obs={self.t_obs} outside [0, {self.domain.T}]")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "us", us)

    def __len__(self):
        return self.xs.size


def make_snapshot(
    c,
    t_obs: float = 0.25,
    n_sensors: int = 256,
    snr_db: float = 36.34,
    seed: int = 0,
    domain: WaveDomain = WaveDomain(),
) -> Snapshot:
    if n_sensors < 2:
        raise ValueError("need at least two sensors")
    xs = np.linspace(0.0, domain.L, n_sensors)
    clean = analytic_u(xs, t_obs, c, domain)
    us = add_noise(clean, snr_db, seed)
    return Snapshot(t_obs, xs, us, snr_db=snr_db, seed=seed, c_true=_speed(c), domain=domain)


# -- snapshot CSV -------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def save_snapshot(snap: Snapshot, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"# c_true={'' if snap.c_true is None else _fmt(snap.c_true)}",
        f"# t_obs={_fmt(snap.t_obs)}",
        f"# snr_db={_fmt(snap.snr_db)}",
        f"# seed={'' if snap.seed is None else snap.seed}",
        f"# L={_fmt(snap.domain.L)}",
        f"# T={_fmt(snap.domain.T)}",
        "x,u",
    ]
    lines += [f"{_fmt(x)},{_fmt(u)}" for x, u in zip(snap.xs, snap.us)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_snapshot(path) -> Snapshot:
    meta = {}
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
        elif line == "x,u":
            continue
        else:
            x, u = line.split(",")
            rows.append((float(x), float(u)))
    data = np.array(rows, dtype=np.float64).reshape(-1, 2)
    domain = WaveDomain(float(meta.get("L", 1.0)), float(meta.get("T", 1.0)))
    return Snapshot(
        t_obs=float(meta["t_obs"]),
        xs=data[:, 0],
        us=data[:, 1],
        snr_db=float(meta.get("snr_db", "inf")),
        seed=int(meta["seed"]) if meta.get("seed") else None,
        c_true=float(meta["c_true"]) if meta.get("c_true") else None,
        domain=domain,
    )
