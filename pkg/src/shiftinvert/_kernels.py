"""Compiled inner loops. Each kernel consumes pre-drawn uniforms so the
random stream is owned by numpy and stays reproducible."""

import numpy as np
from numba import njit

_RESCALE_BELOW = 1e-150


@njit(cache=True)
def _pick_row(cum, target):
    lo = 0
    hi = cum.shape[0] - 1
    while lo < hi:
        mid = (lo + hi) >> 1
        if cum[mid] > target:
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit(cache=True)
def build_guide(cum, size):
    """guide[j] = first index with cum[index] > j * total / size.

    Lookups through the guide return exactly what binary search on ``cum``
    returns, in O(1) expected time.
    """
    total = cum[cum.shape[0] - 1]
    guide = np.empty(size, dtype=np.int64)
    idx = 0
    for j in range(size):
        t = j * total / size
        while cum[idx] <= t:
            idx += 1
        guide[j] = idx
    return guide


@njit(cache=True)
def _pick_row_guided(cum, guide, u, total):
    """Row for uniform draw u: the first index with cum[index] > u * total."""
    target = u * total
    j = int(u * guide.shape[0])
    if j >= guide.shape[0]:
        j = guide.shape[0] - 1
    i = guide[j]
    while i > 0 and cum[i - 1] > target:
        i -= 1
    while cum[i] <= target:
        i += 1
    return i


@njit(cache=True)
def svrg_steps_lazy(indptr, indices, data, cum, guide, inv_p, a_g0, z, scale, offset, eta, lam, uniforms):
    """Variance-reduced steps on y = x - x_anchor kept as y = scale*z + offset*g0.

    One step is y <- (1 - eta*lam) y + eta * inv_p[i] * (a_i . y) a_i - eta*g0,
    which touches only the nonzeros of row i. ``a_g0[i]`` caches a_i . g0.
    Returns the updated (scale, offset); ``z`` is modified in place.
    """
    rho = 1.0 - eta * lam
    total = cum[cum.shape[0] - 1]
    for t in range(uniforms.shape[0]):
        i = _pick_row_guided(cum, guide, uniforms[t], total)
        lo = indptr[i]
        hi = indptr[i + 1]
        az = 0.0
        for k in range(lo, hi):
            az += data[k] * z[indices[k]]
        ay = scale * az + offset * a_g0[i]
        c = eta * inv_p[i] * ay
        scale *= rho
        offset = rho * offset - eta
        coef = c / scale
        for k in range(lo, hi):
            z[indices[k]] += coef * data[k]
        if scale < _RESCALE_BELOW:
            for j in range(z.shape[0]):
                z[j] *= scale
            scale = 1.0
    return scale, offset


@njit(cache=True)
def svrg_steps_lazy_full(rows, cum, guide, inv_p, a_g0, z, scale, offset, eta, lam, uniforms):
    """``svrg_steps_lazy`` for a matrix whose rows are all fully dense."""
    rho = 1.0 - eta * lam
    total = cum[cum.shape[0] - 1]
    d = rows.shape[1]
    for t in range(uniforms.shape[0]):
        i = _pick_row_guided(cum, guide, uniforms[t], total)
        az = 0.0
        for k in range(d):
            az += rows[i, k] * z[k]
        ay = scale * az + offset * a_g0[i]
        c = eta * inv_p[i] * ay
        scale *= rho
        offset = rho * offset - eta
        coef = c / scale
        for k in range(d):
            z[k] += coef * rows[i, k]
        if scale < _RESCALE_BELOW:
            for j in range(d):
                z[j] *= scale
            scale = 1.0
    return scale, offset


@njit(cache=True)
def svrg_steps_dense(indptr, indices, data, cum, guide, inv_p, g0, y, eta, lam, uniforms):
    """Same update applied eagerly, O(d) per step. Used when eta*lam >= 1."""
    total = cum[cum.shape[0] - 1]
    rho = 1.0 - eta * lam
    for t in range(uniforms.shape[0]):
        i = _pick_row_guided(cum, guide, uniforms[t], total)
        lo = indptr[i]
        hi = indptr[i + 1]
        ay = 0.0
        for k in range(lo, hi):
            ay += data[k] * y[indices[k]]
        c = eta * inv_p[i] * ay
        for j in range(y.shape[0]):
            y[j] = rho * y[j] - eta * g0[j]
        for k in range(lo, hi):
            y[indices[k]] += c * data[k]


@njit(cache=True)
def stream_steps(samples, y, g, eta, lam):
    """Streaming corrected steps y <- y - eta*(lam*y - a (a . y) + g), one per sample row."""
    d = y.shape[0]
    for t in range(samples.shape[0]):
        ay = 0.0
        for j in range(d):
            ay += samples[t, j] * y[j]
        for j in range(d):
            y[j] = y[j] - eta * (lam * y[j] - samples[t, j] * ay + g[j])


@njit(cache=True)
def spike_fill(rng, root_strength, v, out):
    """Rows sqrt(strength) * iota * v + z drawn from ``rng`` in the same order
    as ``rng.standard_normal((rows, d + 1))`` with iota in column 0."""
    for i in range(out.shape[0]):
        c = root_strength * rng.standard_normal()
        for j in range(out.shape[1]):
            out[i, j] = rng.standard_normal() + c * v[j]


def warmup():
    """Compile all kernels on tiny inputs (cached to disk after the first call)."""
    indptr = np.array([0, 1], dtype=np.int32)
    indices = np.array([0], dtype=np.int32)
    data = np.array([1.0])
    cum = np.array([1.0])
    u = np.array([0.5])
    z = np.zeros(1)
    guide = build_guide(cum, 1)
    svrg_steps_lazy(indptr, indices, data, cum, guide, np.ones(1), np.zeros(1), z, 1.0, 0.0, 0.1, 1.0, u)
    svrg_steps_lazy_full(np.ones((1, 1)), cum, guide, np.ones(1), np.zeros(1), z, 1.0, 0.0, 0.1, 1.0, u)
    svrg_steps_dense(indptr, indices, data, cum, guide, np.ones(1), np.zeros(1), z, 0.1, 1.0, u)
    stream_steps(np.ones((1, 1)), z, np.zeros(1), 0.1, 1.0)
    spike_fill(np.random.Generator(np.random.Philox(0)), 1.0, np.ones(1), np.empty((1, 1)))
