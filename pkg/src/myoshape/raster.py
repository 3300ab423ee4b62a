"""Signed distance maps, soft binarisation and landmark masks.

The signed distance map is negative inside the myocardium (between the
endocardial and epicardial contours) and positive in the cavity and outside.
Distances are exact Euclidean distances from pixel centres to the contour
polylines.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from skimage.measure import points_in_poly

from .errors import InvalidInputError, TopologyError
from .geometry import Contour, GridSpec, LandmarkSet, spline_contour

ROLES = ("distance_map", "soft_mask", "generic")
_CHUNK = 4096


@dataclass(frozen=True)
class ScalarGrid:
    """Row-major ``(height, width)`` grid of finite reals."""

    values: np.ndarray
    pixel_size_mm: float = 2.0
    role: str = "generic"

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2:
            raise InvalidInputError("grid values must be 2D")
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError("grid contains non-finite values")
        if self.role not in ROLES:
            raise InvalidInputError(f"unknown grid role {self.role!r}")
        if not self.pixel_size_mm > 0:
            raise InvalidInputError("pixel size must be positive")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def spec(self):
        return GridSpec(self.width, self.height, self.pixel_size_mm)


def point_polyline_distance(points, *contours: Contour, block=16):
    """Exact distance from every point to the nearest segment of the contours.

    Segments are grouped into blocks with bounding circles; a block is only
    scanned for points whose lower bound on it can beat the best upper bound.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    starts, ends = zip(*(c.segments() for c in contours))
    start, end = np.vstack(starts), np.vstack(ends)
    n_seg = len(start)
    n_blk = -(-n_seg // block)
    pad = n_blk * block - n_seg
    # padding repeats the last segment so every block is full
    order = np.concatenate([np.arange(n_seg), np.full(pad, n_seg - 1)]).reshape(n_blk, block)
    bs, be = start[order], end[order]
    ends_all = np.concatenate([bs, be], axis=1)
    center = ends_all.mean(axis=1)
    radius = np.sqrt(((ends_all - center[:, None]) ** 2).sum(-1)).max(axis=1)
    seg = be - bs
    seg_len2 = np.einsum("bsk,bsk->bs", seg, seg)

    out = np.empty(len(pts))
    for lo in range(0, len(pts), _CHUNK):
        p = pts[lo : lo + _CHUNK]
        dc = np.sqrt(((p[:, None, :] - center[None]) ** 2).sum(-1))
        upper = (dc + radius).min(axis=1)
        pi, bi = np.nonzero(dc - radius <= upper[:, None])
        rel = p[pi][:, None, :] - bs[bi]
        t = np.clip(np.einsum("nsk,nsk->ns", rel, seg[bi]) / seg_len2[bi], 0.0, 1.0)
        diff = rel - t[..., None] * seg[bi]
        d2 = np.einsum("nsk,nsk->ns", diff, diff).min(axis=1)
        best = np.full(len(p), np.inf)
        np.minimum.at(best, pi, d2)
        out[lo : lo + len(p)] = np.sqrt(best)
    return out


def points_in_polygon(points, polygon):
    """Even-odd point-in-polygon test for a closed polygon."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    poly = polygon.points if isinstance(polygon, Contour) else np.asarray(polygon, dtype=float)
    return points_in_poly(pts, poly)


def _segments_intersect(a0, a1, b0, b1):
    # proper intersection test, broadcasting over leading axes
    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])

    d1 = orient(b0, b1, a0)
    d2 = orient(b0, b1, a1)
    d3 = orient(a0, a1, b0)
    d4 = orient(a0, a1, b1)
    return (d1 * d2 < 0) & (d3 * d4 < 0)


def is_simple(contour: Contour) -> bool:
    """True if no two non-adjacent segments of the closed contour cross."""
    start, end = contour.segments()
    n = len(start)
    hits = _segments_intersect(start[:, None], end[:, None], start[None], end[None])
    i, j = np.nonzero(np.triu(hits, k=2))
    adjacent = (i == 0) & (j == n - 1)
    return not np.any(~adjacent)


def contours_cross(a: Contour, b: Contour) -> bool:
    sa, ea = a.segments()
    sb, eb = b.segments()
    return bool(np.any(_segments_intersect(sa[:, None], ea[:, None], sb[None], eb[None])))


def check_nested(endo: Contour, epi: Contour):
    if not np.all(points_in_polygon(endo.points, epi)) or np.any(points_in_polygon(epi.points, endo)):
        raise TopologyError("endocardial contour is not inside the epicardial contour")
    if contours_cross(endo, epi):
        raise TopologyError("endocardial and epicardial contours intersect")


def distance_map(endo: Contour, epi: Contour, spec: GridSpec = GridSpec()) -> ScalarGrid:
    """Signed distance to the nearer of the two contours, negative in the wall."""
    check_nested(endo, epi)
    centers = spec.pixel_centers()
    dist = point_polyline_distance(centers, endo, epi)
    wall = points_in_polygon(centers, epi) & ~points_in_polygon(centers, endo)
    values = np.where(wall, -dist, dist).reshape(spec.shape)
    return ScalarGrid(values, spec.pixel_size_mm, "distance_map")


def landmark_contours(p: LandmarkSet, n_points=None):
    kwargs = {} if n_points is None else {"n_points": n_points}
    return spline_contour(p.endo, **kwargs), spline_contour(p.epi, **kwargs)


def distance_map_from_landmarks(p: LandmarkSet, spec: GridSpec = GridSpec(), n_points=None) -> ScalarGrid:
    endo, epi = landmark_contours(p, n_points)
    return distance_map(endo, epi, spec)


def soft_mask(D, alpha: float = 5.0):
    """Soft binarisation ``exp(-a D) / (1 + exp(-a D))``.

    Accepts a :class:`ScalarGrid` (returns one with role ``soft_mask``) or an
    array (returns an array).
    """
    if not alpha > 0:
        raise InvalidInputError("alpha must be positive")
    if isinstance(D, ScalarGrid):
        return ScalarGrid(expit(-alpha * D.values), D.pixel_size_mm, "soft_mask")
    return expit(-alpha * np.asarray(D, dtype=float))


def binarize(D):
    """Foreground where the distance is negative."""
    values = D.values if isinstance(D, ScalarGrid) else np.asarray(D, dtype=float)
    return values < 0


def mask_from_landmarks(p: LandmarkSet, spec: GridSpec = GridSpec(), n_points=None):
    """Myocardium mask: filled epi spline polygon minus filled endo polygon,
    evaluated at pixel centres."""
    endo, epi = landmark_contours(p, n_points)
    for name, c in (("endocardial", endo), ("epicardial", epi)):
        if not is_simple(c):
            raise TopologyError(f"{name} spline contour self-intersects")
    centers = spec.pixel_centers()
    fill = points_in_polygon(centers, epi) & ~points_in_polygon(centers, endo)
    return fill.reshape(spec.shape)
