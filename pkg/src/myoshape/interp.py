"""Bilinear sampling of 2D grids with clamped coordinates.

Grids are indexed ``values[y, x]``.  Sample coordinates outside
``[0, W-1] x [0, H-1]`` are clamped to the border; the spatial derivative of a
clamped coordinate is zero.
"""
import numpy as np


def bilinear_weights(shape, xs, ys):
    """Flat indices and weights of the four supporting pixels per sample.

    Returns ``(idx, w, inside_x, inside_y, fx, fy)`` where ``idx`` and ``w``
    have shape ``(n, 4)`` in the order (y0,x0), (y0,x1), (y1,x0), (y1,x1).
    """
    h, w = shape
    xs = np.asarray(xs, dtype=float).reshape(-1)
    ys = np.asarray(ys, dtype=float).reshape(-1)
    inside_x = (xs >= 0) & (xs <= w - 1)
    inside_y = (ys >= 0) & (ys <= h - 1)
    xc = np.clip(xs, 0, w - 1)
    yc = np.clip(ys, 0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    idx = np.stack([y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1], axis=1)
    wts = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
    return idx, wts, inside_x, inside_y, fx, fy


def bilinear_sample(values, xs, ys, with_grad=False):
    """Sample ``values`` at ``(xs, ys)``.

    With ``with_grad`` also returns ``(dv/dx, dv/dy)`` at every sample.
    """
    values = np.asarray(values, dtype=float)
    idx, wts, inside_x, inside_y, fx, fy = bilinear_weights(values.shape, xs, ys)
    corners = values.reshape(-1)[idx]
    out = np.sum(corners * wts, axis=1)
    if not with_grad:
        return out
    v00, v01, v10, v11 = corners.T
    dx = ((1 - fy) * (v01 - v00) + fy * (v11 - v10)) * inside_x
    dy = ((1 - fx) * (v10 - v00) + fx * (v11 - v01)) * inside_y
    return out, dx, dy


def scatter_adjoint(shape, idx, wts, upstream):
    """Transpose of sampling: accumulate ``upstream`` into the grid."""
    flat = np.bincount(
        idx.reshape(-1),
        weights=(wts * np.asarray(upstream, dtype=float)[:, None]).reshape(-1),
        minlength=shape[0] * shape[1],
    )
    return flat.reshape(shape)
