"""Fused elementwise kernels for tanh layers acting on stacked 2-jets.

A block's stacked array is ``(k, n_points, width)``. With ``k = 5`` the
channels are value, d/dx, d/dt, d2/dx2, d2/dt2; ``k = 2`` is value plus one
first derivative; ``k = 1`` is the value alone. The affine maps stay as BLAS
matmuls in :mod:`bopinn.field`. Dropout masks are applied by the caller (a
branch inside the loop defeats vectorization).
"""
from numba import njit


@njit(cache=True)
def tanh_jet_forward(z, a, h):
    """Jet of tanh(z) into ``h``, given ``a = tanh(z[0])`` (numpy's vectorized
    tanh beats a scalar call per element here)."""
    k, n, w = z.shape
    for i in range(n):
        for j in range(w):
            ai = a[i, j]
            h[0, i, j] = ai
            if k == 1:
                continue
            s1 = 1.0 - ai * ai
            if k == 2:
                h[1, i, j] = s1 * z[1, i, j]
                continue
            s2 = -2.0 * ai * s1
            for d in range(2):
                zd = z[1 + d, i, j]
                h[1 + d, i, j] = s1 * zd
                h[3 + d, i, j] = s2 * zd * zd + s1 * z[3 + d, i, j]


@njit(cache=True)
def tanh_jet_backward(hbar, z, a, zbar, gb):
    """Cotangent of the pre-activation jet ``z`` from the cotangent of its tanh jet.

    The value-channel cotangent is also summed over points into ``gb`` (the
    bias gradient).
    """
    k, n, w = z.shape
    for i in range(n):
        for j in range(w):
            ai = a[i, j]
            s1 = 1.0 - ai * ai
            acc = hbar[0, i, j] * s1
            if k == 2:
                g1 = hbar[1, i, j]
                acc += -2.0 * ai * s1 * g1 * z[1, i, j]
                zbar[1, i, j] = g1 * s1
            elif k == 5:
                s2 = -2.0 * ai * s1
                s3 = -2.0 * s1 * (1.0 - 3.0 * ai * ai)
                for d in range(2):
                    zd = z[1 + d, i, j]
                    gd = hbar[1 + d, i, j]
                    gdd = hbar[3 + d, i, j]
                    zbar[3 + d, i, j] = gdd * s1
                    zbar[1 + d, i, j] = gd * s1 + 2.0 * gdd * s2 * zd
                    acc += gd * s2 * zd + gdd * (s3 * zd * zd + s2 * z[3 + d, i, j])
            zbar[0, i, j] = acc
            gb[j] += acc
