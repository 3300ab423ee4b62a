"""Left-ventricle parameters: cavity and myocardial areas, cavity dimensions
in three orientation groups and regional wall thickness in six segments.

Segment ``k`` covers landmark indices ``k*n/6 .. (k+1)*n/6 - 1`` (3 per
segment for 18 landmarks per ring), starting at the orientation angle.
Diameter group ``j`` covers the pairs ``(i, i + n/2)`` for the ``j``-th third
of ``i`` in ``0 .. n/2 - 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.measure import find_contours

from .errors import InvalidInputError, TopologyError, UnrealisticShapeError
from .geometry import Contour, LandmarkSet, polygon_area, resample_equiangular, spline_contour
from .metrics import _FOUR, _enclosed_background, classify_shape
from .raster import is_simple

N_SEGMENTS = 6
N_DIMS = 3


@dataclass(frozen=True)
class LVParams:
    a_lv: float  # mm^2
    a_myo: float  # mm^2
    dim_lv: tuple  # 3 values, mm
    rwt: tuple  # 6 values, mm

    def as_vector(self):
        return np.array([self.a_lv, self.a_myo, *self.dim_lv, *self.rwt])

    @staticmethod
    def columns():
        return ["a_lv_mm2", "a_myo_mm2", "dim1_mm", "dim2_mm", "dim3_mm"] + [f"rwt{k}_mm" for k in range(1, 7)]


def _ring_area(ring):
    contour = spline_contour(ring)
    if not is_simple(contour):
        raise TopologyError("spline contour self-intersects")
    return abs(polygon_area(contour.points))


def lv_params_from_landmarks(p: LandmarkSet, pixel_size_mm: float = 2.0) -> LVParams:
    """Parameters from an endo+epi landmark set (any pose)."""
    if not isinstance(p, LandmarkSet):
        p = LandmarkSet(p)
    n = p.n_endo
    if len(p) != 2 * n or n % N_SEGMENTS or n % (2 * N_DIMS):
        raise InvalidInputError(f"need equal rings with a multiple of {2 * N_DIMS} landmarks each")
    px = float(pixel_size_mm)
    if not px > 0:
        raise InvalidInputError("pixel size must be positive")
    endo, epi = p.endo, p.epi
    thick = np.hypot(*(epi - endo).T) * px
    rwt = thick.reshape(N_SEGMENTS, -1).mean(axis=1)
    half = n // 2
    diam = np.hypot(*(endo[half:] - endo[:half]).T) * px
    dims = diam.reshape(N_DIMS, -1).mean(axis=1)
    a_endo = _ring_area(endo)
    a_epi = _ring_area(epi)
    return LVParams(a_endo * px**2, (a_epi - a_endo) * px**2, tuple(dims.tolist()), tuple(rwt.tolist()))


def _iso_contour(region, sigma):
    field = np.pad(region.astype(float), 2)
    if sigma > 0:
        field = ndimage.gaussian_filter(field, sigma)
    found = find_contours(field, 0.5)
    if not found:
        raise TopologyError("no boundary found")
    longest = max(found, key=len)
    return Contour(longest[:, ::-1] - 2.0)


def mask_landmarks(m, theta: float, n_endo: int = 18, sigma: float = 1.0) -> LandmarkSet:
    """Equiangular landmarks on the cavity/myocardium and myocardium/exterior
    boundaries of a myocardium mask, around the cavity centroid.

    Boundaries are the 0.5 iso-lines of the (optionally Gaussian-smoothed)
    cavity and filled-epicardium indicator images.
    """
    m = np.asarray(m, dtype=bool)
    flags = classify_shape(m)
    if flags:
        raise UnrealisticShapeError(f"mask flagged as {sorted(flags)}", flags)
    enclosed, labels = _enclosed_background(m)
    cavity = np.isin(labels, enclosed)
    filled = ndimage.binary_fill_holes(m, _FOUR) | cavity
    ys, xs = np.nonzero(cavity)
    center = np.array([xs.mean(), ys.mean()])
    endo = resample_equiangular(_iso_contour(cavity, sigma), center, theta, n_endo)
    epi = resample_equiangular(_iso_contour(filled, sigma), center, theta, n_endo)
    return LandmarkSet(np.vstack([endo, epi]), n_endo)


def lv_params_from_mask(m, theta: float, pixel_size_mm: float = 2.0, n_endo: int = 18, sigma: float = 1.0) -> LVParams:
    """Parameters from a binary myocardium mask and an orientation angle."""
    return lv_params_from_landmarks(mask_landmarks(m, theta, n_endo, sigma), pixel_size_mm)
