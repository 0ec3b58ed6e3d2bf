"""Hot numeric kernels with a numba path and a pure-numpy fallback.

``render_rects`` rasterizes axis-aligned world rectangles through an affine
camera; it runs once per rendered frame in the data generator and once per
environment step during RL. ``nearest_neighbor_indices`` is the O(F^2)
search behind the alignment metric.

Both public functions dispatch on :func:`skillemb._accel.numba_enabled`, which
is read at call time so the benchmark can flip the flag in-process.
"""

import numpy as np

from ._accel import njit, numba_enabled


@njit(cache=True)
def _render_rects_nb(out, rects, colors, inv_affine):
    h, w = out.shape[0], out.shape[1]
    k = rects.shape[0]
    a00, a01, a02 = inv_affine[0, 0], inv_affine[0, 1], inv_affine[0, 2]
    a10, a11, a12 = inv_affine[1, 0], inv_affine[1, 1], inv_affine[1, 2]
    for v in range(h):
        pv = v + 0.5
        for u in range(w):
            pu = u + 0.5
            x = a00 * pu + a01 * pv + a02
            y = a10 * pu + a11 * pv + a12
            hit = -1
            for r in range(k):
                if rects[r, 0] <= x < rects[r, 2] and rects[r, 1] <= y < rects[r, 3]:
                    hit = r
            if hit >= 0:
                out[v, u, 0] = colors[hit, 0]
                out[v, u, 1] = colors[hit, 1]
                out[v, u, 2] = colors[hit, 2]
    return out


def _render_rects_np(out, rects, colors, inv_affine):
    h, w = out.shape[:2]
    pv, pu = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    x = inv_affine[0, 0] * pu + inv_affine[0, 1] * pv + inv_affine[0, 2]
    y = inv_affine[1, 0] * pu + inv_affine[1, 1] * pv + inv_affine[1, 2]
    for r in range(rects.shape[0]):
        x0, y0, x1, y1 = rects[r]
        mask = (x >= x0) & (x < x1) & (y >= y0) & (y < y1)
        out[mask] = colors[r]
    return out


def render_rects(background, rects, colors, inv_affine, size):
    """Paint rectangles (later ones on top) into a ``size x size`` RGB frame.

    ``rects`` rows are world boxes ``[x0, y0, x1, y1]``; ``inv_affine`` maps
    pixel-center coordinates ``(u + .5, v + .5, 1)`` to world ``(x, y)``.
    """
    out = np.empty((size, size, 3), dtype=np.uint8)
    out[:] = np.asarray(background, dtype=np.uint8)
    rects = np.ascontiguousarray(rects, dtype=np.float64).reshape(-1, 4)
    colors = np.ascontiguousarray(colors, dtype=np.uint8).reshape(-1, 3)
    inv_affine = np.ascontiguousarray(inv_affine, dtype=np.float64)
    if numba_enabled():
        return _render_rects_nb(out, rects, colors, inv_affine)
    return _render_rects_np(out, rects, colors, inv_affine)


@njit(cache=True)
def _nn_nb(a, b):
    n_a, n_b, d = a.shape[0], b.shape[0], a.shape[1]
    idx = np.empty(n_a, dtype=np.int64)
    for i in range(n_a):
        best = np.inf
        best_j = 0
        for j in range(n_b):
            s = 0.0
            for c in range(d):
                diff = a[i, c] - b[j, c]
                s += diff * diff
            if s < best:
                best = s
                best_j = j
        idx[i] = best_j
    return idx


def _nn_np(a, b):
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
    # argmin returns the first minimum: smallest index wins ties
    return np.argmin(d2, axis=1).astype(np.int64)


def nearest_neighbor_indices(a, b):
    """For each row of ``a``, index of the Euclidean-nearest row of ``b``."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"incompatible shapes {a.shape} and {b.shape}")
    if numba_enabled():
        return _nn_nb(a, b)
    return _nn_np(a, b)
