"""Landmark sets, pose transforms and contour helpers.

Coordinates are pixel units in an image frame where pixel ``(row, col)`` has
its centre at ``(x, y) = (col, row)``.  A landmark set stores the endocardial
ring first and the epicardial ring second; both rings are sampled
counterclockwise at the same equiangular offsets so that endo index ``i`` and
epi index ``i`` lie on the same ray from the LV centre.  Index 0 sits at the
reference orientation ``theta``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import AmbiguityError, InvalidInputError, NonStarShapedError

DEFAULT_N_ENDO = 18
DEFAULT_CONTOUR_POINTS = 360


def wrap_angle(theta):
    """Wrap angle(s) into ``(-pi, pi]``."""
    wrapped = math.pi - np.mod(math.pi - np.asarray(theta, dtype=float), 2 * math.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def _finite_points(points, what="points"):
    arr = np.array(points, dtype=float)
    if arr.ndim == 1 and arr.size % 2 == 0:
        arr = arr.reshape(-1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidInputError(f"{what} must have shape (n, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{what} contain non-finite values")
    return arr


@dataclass(frozen=True)
class LandmarkSet:
    """Endocardial + epicardial landmarks, shape ``(2 * n_endo, 2)``."""

    points: np.ndarray
    n_endo: int = DEFAULT_N_ENDO

    def __post_init__(self):
        pts = _finite_points(self.points, "landmarks")
        if pts.shape[0] != 2 * self.n_endo:
            raise InvalidInputError(
                f"expected {2 * self.n_endo} landmarks for n_endo={self.n_endo}, got {pts.shape[0]}"
            )
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_flat(cls, vector, n_endo=None):
        """Build from an interleaved ``(x0, y0, x1, y1, ...)`` vector."""
        vec = np.asarray(vector, dtype=float).reshape(-1, 2)
        return cls(vec, n_endo if n_endo is not None else vec.shape[0] // 2)

    @property
    def flat(self):
        return self.points.reshape(-1)

    @property
    def endo(self):
        return self.points[: self.n_endo]

    @property
    def epi(self):
        return self.points[self.n_endo :]

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class Pose:
    """LV orientation ``theta`` (radians) and centre ``(cx, cy)`` in pixels."""

    theta: float = 0.0
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        theta = float(self.theta)
        center = tuple(float(v) for v in np.asarray(self.center, dtype=float).reshape(2))
        if not (math.isfinite(theta) and all(math.isfinite(v) for v in center)):
            raise InvalidInputError("pose contains non-finite values")
        object.__setattr__(self, "theta", wrap_angle(theta))
        object.__setattr__(self, "center", center)

    @property
    def c(self):
        return np.array(self.center)

    def as_vector(self):
        return np.array([self.theta, *self.center])


@dataclass(frozen=True)
class Contour:
    """Closed (or open) polyline; the closing segment is implicit."""

    points: np.ndarray
    closed: bool = True

    def __post_init__(self):
        pts = _finite_points(self.points, "contour points")
        if pts.shape[0] < 3:
            raise InvalidInputError("a contour needs at least 3 points")
        step = np.diff(pts, axis=0)
        if np.any(np.all(step == 0, axis=1)):
            raise InvalidInputError("contour has consecutive duplicate points")
        if self.closed and np.all(pts[0] == pts[-1]):
            pts = pts[:-1]
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def segments(self):
        """Return segment start and end points, including the closing segment."""
        start = self.points
        end = np.roll(self.points, -1, axis=0) if self.closed else self.points[1:]
        if not self.closed:
            start = start[:-1]
        return start, end

    def __len__(self):
        return self.points.shape[0]


def rotation(theta):
    """Normalising rotation ``[[cos, sin], [-sin, cos]]``."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]])


def normalize_points(points, theta, center):
    """Array form of :func:`pose_normalize`: ``R(theta) @ (p - c)`` row-wise."""
    return (np.asarray(points, dtype=float) - np.asarray(center, dtype=float)) @ rotation(theta).T


def denormalize_points(points, theta, center):
    """Array form of :func:`pose_denormalize`."""
    return np.asarray(points, dtype=float) @ rotation(theta) + np.asarray(center, dtype=float)


def pose_normalize(p: LandmarkSet, pose: Pose) -> LandmarkSet:
    return LandmarkSet(normalize_points(p.points, pose.theta, pose.center), p.n_endo)


def pose_denormalize(s: LandmarkSet, pose: Pose) -> LandmarkSet:
    return LandmarkSet(denormalize_points(s.points, pose.theta, pose.center), s.n_endo)


def orientation_from_rv(lv_center, rv_a, rv_b, tol=1e-12) -> float:
    """Orientation of the bisector of the angle at the LV centre spanned by
    the two RV attachment points.

    The bisector on the side of the smaller enclosed angle is returned, so the
    result does not depend on the order of ``rv_a`` and ``rv_b``.
    """
    c = _finite_points([lv_center], "lv_center")[0]
    ra = _finite_points([rv_a], "rv_a")[0] - c
    rb = _finite_points([rv_b], "rv_b")[0] - c
    na, nb = np.hypot(*ra), np.hypot(*rb)
    if na <= tol or nb <= tol:
        raise InvalidInputError("RV attachment point coincides with the LV centre")
    ang_a = math.atan2(ra[1], ra[0])
    ang_b = math.atan2(rb[1], rb[0])
    half = wrap_angle(ang_b - ang_a) / 2.0
    # cross/dot of the unit rays tells us how close to anti-parallel we are
    cross = (ra[0] * rb[1] - ra[1] * rb[0]) / (na * nb)
    dot = (ra @ rb) / (na * nb)
    if dot < 0 and abs(cross) <= 1e-12:
        raise AmbiguityError("RV attachment rays are anti-parallel; bisector is ambiguous")
    return wrap_angle(ang_a + half)


def periodic_spline(ring):
    """Chord-length parameterised periodic cubic spline through a closed ring.

    Returns ``(spline, knots)`` where ``spline(knots[i]) == ring[i]`` and
    ``knots[-1]`` closes the loop.
    """
    pts = _finite_points(ring, "ring")
    if pts.shape[0] < 4:
        raise InvalidInputError("spline interpolation needs at least 4 landmarks per ring")
    closed = np.vstack([pts, pts[:1]])
    chords = np.hypot(*np.diff(closed, axis=0).T)
    if np.any(chords == 0):
        raise InvalidInputError("ring contains duplicate consecutive landmarks")
    knots = np.concatenate([[0.0], np.cumsum(chords)])
    return CubicSpline(knots, closed, bc_type="periodic"), knots


def _allocate_samples(chords, n_points):
    # largest-remainder split of n_points over segments, at least one each
    n_seg = len(chords)
    share = chords / chords.sum() * n_points
    counts = np.maximum(np.floor(share).astype(int), 1)
    while counts.sum() > n_points:
        idx = np.argmax(np.where(counts > 1, counts - share, -np.inf))
        counts[idx] -= 1
    remainder = share - counts
    for idx in np.argsort(-remainder)[: n_points - counts.sum()]:
        counts[idx] += 1
    assert counts.sum() == n_points and len(counts) == n_seg
    return counts


def spline_contour(ring, n_points: int = DEFAULT_CONTOUR_POINTS) -> Contour:
    """Closed cubic-spline contour through a landmark ring.

    Samples are spread over the spline segments in proportion to their chord
    length and every landmark is itself a contour vertex, so the polyline
    passes through the landmarks exactly.
    """
    spline, knots = periodic_spline(ring)
    n_ring = len(knots) - 1
    if n_points < n_ring:
        raise InvalidInputError(f"n_points={n_points} is smaller than the ring size {n_ring}")
    counts = _allocate_samples(np.diff(knots), n_points)
    params = np.concatenate(
        [knots[i] + (knots[i + 1] - knots[i]) * np.arange(k) / k for i, k in enumerate(counts)]
    )
    pts = spline(params)
    pts[np.cumsum(np.concatenate([[0], counts[:-1]]))] = _finite_points(ring)
    return Contour(pts, closed=True)


def polygon_area(points) -> float:
    """Signed shoelace area (positive for counterclockwise)."""
    x, y = np.asarray(points, dtype=float).T
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(points):
    pts = np.asarray(points, dtype=float)
    x, y = pts.T
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = cross.sum() / 2.0
    if area == 0:
        raise InvalidInputError("zero-area polygon has no centroid")
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * area)


def ray_crossings(contour: Contour, center, angles):
    """Intersections of rays from ``center`` with the contour polyline.

    Returns a list (one per angle) of arrays of ray parameters ``t > 0``;
    the crossing point is ``center + t * (cos a, sin a)``.
    """
    start, end = contour.segments()
    o = np.asarray(center, dtype=float)
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    d = np.stack([np.cos(angles), np.sin(angles)], axis=1)[:, None, :]
    e = (end - start)[None, :, :]
    w = (start - o)[None, :, :]
    denom = d[..., 0] * e[..., 1] - d[..., 1] * e[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[..., 0] * e[..., 1] - w[..., 1] * e[..., 0]) / denom
        u = (w[..., 0] * d[..., 1] - w[..., 1] * d[..., 0]) / denom
    # segments are closed up to a small tolerance and hits at (nearly) the same
    # distance are merged, so a ray through a vertex counts once
    eps = 1e-9
    hit = (denom != 0) & (t > 1e-12) & (u >= -eps) & (u <= 1 + eps)
    out = []
    for i in range(len(angles)):
        ts = np.sort(t[i][hit[i]])
        if ts.size > 1:
            keep = np.concatenate([[True], np.diff(ts) > eps * np.maximum(ts[1:], 1.0)])
            ts = ts[keep]
        out.append(ts)
    return out


def resample_equiangular(contour: Contour, center, theta: float, n: int):
    """Sample ``n`` points on a star-shaped contour at angles
    ``theta + 2*pi*i/n`` around ``center``."""
    if n < 1:
        raise InvalidInputError("n must be positive")
    o = np.asarray(center, dtype=float)
    angles = theta + 2 * math.pi * np.arange(n) / n
    out = np.empty((n, 2))
    for i, (a, ts) in enumerate(zip(angles, ray_crossings(contour, o, angles))):
        if len(ts) != 1:
            raise NonStarShapedError(
                f"ray at angle {a:.4f} rad crosses the contour {len(ts)} times"
            )
        out[i] = o + ts[0] * np.array([math.cos(a), math.sin(a)])
    return out


def landmark_angles(n_endo: int, theta: float = 0.0):
    """Angles of the equiangular landmark rays, index 0 at ``theta``."""
    return theta + 2 * math.pi * np.arange(n_endo) / n_endo


@dataclass(frozen=True)
class GridSpec:
    """Raster geometry: ``width x height`` pixels of ``pixel_size_mm``."""

    width: int = 128
    height: int = 128
    pixel_size_mm: float = 2.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or not self.pixel_size_mm > 0:
            raise InvalidInputError("grid dimensions and pixel size must be positive")

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def center(self):
        return np.array([(self.width - 1) / 2.0, (self.height - 1) / 2.0])

    def pixel_centers(self):
        """``(height*width, 2)`` array of ``(x, y)`` pixel centres, row-major."""
        ys, xs = np.mgrid[0 : self.height, 0 : self.width]
        return np.stack([xs.ravel(), ys.ravel()], axis=1).astype(float)

