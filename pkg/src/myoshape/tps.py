"""Thin-plate-spline transforms and backward grid warping."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, InvalidInputError
from .geometry import GridSpec, LandmarkSet
from .interp import bilinear_sample
from .raster import ScalarGrid


def tps_kernel(r):
    """``U(r) = r^2 log r`` with ``U(0) = 0``."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    pos = r > 0
    out[pos] = r[pos] ** 2 * np.log(r[pos])
    return out


def _points(p):
    arr = p.points if isinstance(p, LandmarkSet) else np.asarray(p, dtype=float)
    arr = arr.reshape(-1, 2)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("non-finite control points")
    return arr


def _pairwise(a, b):
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))


def tps_system(src, lambda_tps=0.0):
    """Bordered TPS system matrix ``[[K + lambda I, P], [P^T, 0]]``."""
    n = len(src)
    K = tps_kernel(_pairwise(src, src)) + lambda_tps * np.eye(n)
    P = np.hstack([np.ones((n, 1)), src])
    L = np.zeros((n + 3, n + 3))
    L[:n, :n] = K
    L[:n, n:] = P
    L[n:, :n] = P.T
    return L


def tps_basis(src, points):
    """Rows ``[U(|x - src_i|)..., 1, x, y]`` for every query point."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return np.hstack([tps_kernel(_pairwise(pts, src)), np.ones((len(pts), 1)), pts])


def _check_configuration(src):
    if len(src) < 3:
        raise DegenerateError("TPS needs at least 3 control points")
    centered = src - src.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[-1] <= 1e-10 * max(sv[0], 1.0):
        raise DegenerateError("TPS control points are collinear")
    d = _pairwise(src, src)
    np.fill_diagonal(d, np.inf)
    if np.min(d) <= 1e-12 * max(sv[0], 1.0):
        raise DegenerateError("duplicate TPS control points")


@dataclass(frozen=True)
class TpsTransform:
    src: np.ndarray  # (n, 2)
    affine: np.ndarray  # (3, 2): rows for 1, x, y
    weights: np.ndarray  # (n, 2)
    lambda_tps: float = 0.0

    def __call__(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return tps_basis(self.src, pts) @ np.vstack([self.weights, self.affine])


def tps_fit(src, dst, lambda_tps: float = 0.0) -> TpsTransform:
    """Thin-plate spline with ``f(src_i) = dst_i`` (exact when ``lambda_tps = 0``)."""
    s, d = _points(src), _points(dst)
    if s.shape != d.shape:
        raise InvalidInputError("source and target landmark sets differ in size")
    if lambda_tps < 0:
        raise InvalidInputError("lambda_tps must be non-negative")
    _check_configuration(s)
    n = len(s)
    rhs = np.vstack([d, np.zeros((3, 2))])
    L = tps_system(s, lambda_tps)
    try:
        sol = np.linalg.solve(L, rhs)
    except np.linalg.LinAlgError as exc:
        raise DegenerateError("singular TPS system") from exc
    if not np.all(np.isfinite(sol)):
        raise DegenerateError("singular TPS system")
    return TpsTransform(s, sol[n:], sol[:n], float(lambda_tps))


def tps_warp_grid(grid: ScalarGrid, t: TpsTransform, out_spec: GridSpec = None) -> ScalarGrid:
    """Backward warp: output pixel ``x`` takes ``grid`` sampled at ``t(x)``."""
    out_spec = out_spec or grid.spec
    q = t(out_spec.pixel_centers())
    vals = bilinear_sample(grid.values, q[:, 0], q[:, 1]).reshape(out_spec.shape)
    return ScalarGrid(vals, out_spec.pixel_size_mm, grid.role)


def scale_factor(mean_shape, p_p, c_p) -> float:
    """Ratio of the mean radius of the mean shape (about the origin) to the
    mean radius of ``p_p`` about ``c_p``."""
    s = _points(mean_shape)
    p = _points(p_p)
    if len(s) == 0 or len(p) == 0:
        raise InvalidInputError("empty landmark set")
    denom = np.mean(np.hypot(*(p - np.asarray(c_p, dtype=float)).T))
    if denom <= 0:
        raise DegenerateError("landmarks collapse onto the LV centre")
    return float(np.mean(np.hypot(*s.T)) / denom)
