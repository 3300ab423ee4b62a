"""Segmentation, pose and shape error metrics, shape sanity flags and a paired
rank permutation test.

Masks are boolean ``(H, W)`` arrays.  Distances are in pixels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from scipy.stats import rankdata
from skimage.measure import find_contours
from skimage.morphology import convex_hull_image

from .errors import InvalidInputError, UndefinedMetricError
from .geometry import Contour, LandmarkSet, Pose, denormalize_points, wrap_angle
from .raster import point_polyline_distance
from .shape_model import ShapeModel, reconstruct_flat

FLAGS = ("empty", "no_cavity", "open_myocardium", "multi_component")
_EIGHT = np.ones((3, 3), dtype=bool)
_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass
class MetricReport:
    dsc: float
    mbe_px: float
    hd_px: float
    flags: set = field(default_factory=set)

    def to_row(self):
        return {"dsc": self.dsc, "mbe_px": self.mbe_px, "hd_px": self.hd_px, "flags": "|".join(sorted(self.flags))}


def _mask(m):
    m = np.asarray(m)
    if m.ndim != 2:
        raise InvalidInputError("mask must be 2D")
    return m.astype(bool)


def _pair(a, b):
    a, b = _mask(a), _mask(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def dsc(a, b) -> float:
    """Dice coefficient; two empty masks score 1."""
    a, b = _pair(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a & b)) / total


def boundary_pixels(m):
    """Foreground pixels with a 4-neighbour in the background (outside counts
    as background).  Returns ``(n, 2)`` (row, col) coordinates."""
    m = _mask(m)
    interior = ndimage.binary_erosion(m, _FOUR, border_value=0)
    return np.argwhere(m & ~interior).astype(float)


def _contour_points(m):
    padded = np.pad(m.astype(float), 1)
    contours = [Contour(c[:, ::-1] - 1.0) for c in find_contours(padded, 0.5) if len(c) > 3]
    return contours


def boundary_distances(a, b, mode="pixels"):
    """Symmetric mean boundary error and Hausdorff distance, ``(mbe, hd)``.

    ``mode="pixels"`` uses boundary pixel centres.  ``mode="contour"`` measures
    from boundary pixels to the sub-pixel iso-contour of the other mask; it is
    an alternative, not a reproduction of any published protocol.
    """
    a, b = _pair(a, b)
    if not a.any() or not b.any():
        raise UndefinedMetricError("boundary distance undefined for an empty mask")
    ba, bb = boundary_pixels(a), boundary_pixels(b)
    if mode == "pixels":
        d_ab = cKDTree(bb).query(ba)[0]
        d_ba = cKDTree(ba).query(bb)[0]
    elif mode == "contour":
        d_ab = point_polyline_distance(ba[:, ::-1], *_contour_points(b))
        d_ba = point_polyline_distance(bb[:, ::-1], *_contour_points(a))
    else:
        raise InvalidInputError("mode must be 'pixels' or 'contour'")
    # correctly rounded sums, independent of summation order
    mbe = 0.5 * (math.fsum(d_ab) / d_ab.size + math.fsum(d_ba) / d_ba.size)
    hd = max(d_ab.max(), d_ba.max())
    return float(mbe), float(hd)


def _enclosed_background(m):
    """Labels of 4-connected background components that do not touch the border."""
    labels, n = ndimage.label(~m, _FOUR)
    border = np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]))
    return [k for k in range(1, n + 1) if k not in border], labels


def classify_shape(m, open_fraction=0.05) -> set:
    """Flags for unrealistic myocardium masks.

    A mask without an enclosed background component is ``open_myocardium`` when
    its convex hull encloses a large missing region (a cavity leaking to the
    outside) and ``no_cavity`` otherwise.  ``open_fraction`` is the minimum size
    of that region relative to the foreground.
    """
    m = _mask(m)
    if not m.any():
        return {"empty"}
    flags = set()
    if ndimage.label(m, _EIGHT)[1] > 1:
        flags.add("multi_component")
    enclosed, _ = _enclosed_background(m)
    if not enclosed:
        deficit = convex_hull_image(m) & ~m
        sizes = np.bincount(ndimage.label(deficit, _FOUR)[0].ravel())[1:]
        largest = sizes.max() if sizes.size else 0
        if largest >= max(4, open_fraction * m.sum()):
            flags.add("open_myocardium")
        else:
            flags.add("no_cavity")
    return flags


def evaluate_masks(pred, truth) -> MetricReport:
    """DSC, boundary errors (NaN if either mask is empty) and flags of ``pred``."""
    pred, truth = _pair(pred, truth)
    try:
        mbe, hd = boundary_distances(pred, truth)
    except UndefinedMetricError:
        mbe = hd = math.nan
    return MetricReport(dsc(pred, truth), mbe, hd, classify_shape(pred))


def pose_errors(truth: Pose, pred: Pose):
    """``(position error px, orientation error degrees)``."""
    dc = float(np.hypot(*(truth.c - pred.c)))
    dtheta = abs(wrap_angle(truth.theta - pred.theta))
    return dc, math.degrees(dtheta)


def _truth_points(p_t):
    return p_t.points if isinstance(p_t, LandmarkSet) else np.asarray(p_t, dtype=float).reshape(-1, 2)


def shape_landmark_error(model: ShapeModel, b_p, truth_pose: Pose, p_t) -> float:
    """Mean landmark distance with predicted shape and true pose."""
    s = reconstruct_flat(model, b_p).reshape(-1, 2)
    p = denormalize_points(s, truth_pose.theta, truth_pose.center)
    pts = _truth_points(p_t)
    if pts.shape != p.shape:
        raise InvalidInputError("landmark count does not match the model")
    return float(np.hypot(*(p - pts).T).mean())


def shape_landmark_error_curve(model: ShapeModel, b_p, truth_pose: Pose, p_t):
    """Error using only the first ``k`` coefficients, for ``k = 0..len(b_p)``."""
    b = np.asarray(b_p, dtype=float)
    out = []
    for k in range(b.size + 1):
        trunc = np.zeros_like(b)
        trunc[:k] = b[:k]
        out.append(shape_landmark_error(model, trunc, truth_pose, p_t))
    return np.array(out)


def bootstrap_rank_test(metric_a, metric_b, n_perm=100_000, seed=0, chunk=2000) -> float:
    """Paired rank permutation test between two methods evaluated on the same cases.

    All ``2n`` values are ranked jointly (ties share average ranks).  The
    statistic is the mean rank difference between methods; under the null the
    two values of each case are exchangeable, so permutations swap them per
    case.  Returns the fraction of permutations whose absolute statistic is at
    least the observed one.
    """
    a = np.asarray(metric_a, dtype=float).ravel()
    b = np.asarray(metric_b, dtype=float).ravel()
    if a.size != b.size:
        raise InvalidInputError("metric lists must have equal length")
    if a.size < 2:
        raise InvalidInputError("need at least two cases")
    if n_perm < 1000:
        raise InvalidInputError("n_perm must be at least 1000")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInputError("metrics must be finite")
    ranks = rankdata(np.concatenate([a, b]))
    # doubled ranks are integers even with ties, so comparisons are exact
    d = np.rint(2 * (ranks[: a.size] - ranks[a.size :])).astype(np.int64)
    observed = abs(int(d.sum()))
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < n_perm:
        k = min(chunk, n_perm - done)
        signs = rng.integers(0, 2, size=(k, d.size), dtype=np.int64) * 2 - 1
        hits += int(np.count_nonzero(np.abs(signs @ d) >= observed))
        done += k
    return hits / n_perm


def mae_and_correlation(truth, pred):
    """Mean absolute error and Pearson correlation."""
    t = np.asarray(truth, dtype=float).ravel()
    p = np.asarray(pred, dtype=float).ravel()
    if t.size != p.size or t.size < 2:
        raise InvalidInputError("need equal-length inputs with at least two values")
    mae = float(np.mean(np.abs(t - p)))
    tc, pc = t - t.mean(), p - p.mean()
    denom = math.sqrt(float(tc @ tc) * float(pc @ pc))
    if denom == 0:
        raise UndefinedMetricError("correlation undefined for zero variance")
    return mae, float(tc @ pc) / denom
