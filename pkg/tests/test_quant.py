import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.draw import polygon2mask

from myoshape.errors import InvalidInputError, TopologyError, UnrealisticShapeError
from myoshape.geometry import LandmarkSet, Pose, polygon_area, pose_denormalize, spline_contour
from myoshape.quant import LVParams, lv_params_from_landmarks, lv_params_from_mask, mask_landmarks
from myoshape.raster import mask_from_landmarks

from conftest import annulus_landmarks, ring


def radial_landmarks(center, theta, endo, epi, n=18):
    """Rings sampled at ``theta + 2 pi i / n`` from radial functions of the image angle."""
    a = theta + 2 * math.pi * np.arange(n) / n
    u = np.c_[np.cos(a), np.sin(a)]
    c = np.asarray(center, dtype=float)
    return LandmarkSet(np.vstack([c + endo(a)[:, None] * u, c + epi(a)[:, None] * u]), n)


def test_annulus_anchors():
    # 20 / 30 mm radii at 2 mm per pixel
    q = lv_params_from_landmarks(annulus_landmarks(r_endo=10, r_epi=15), 2.0)
    assert q.a_lv == pytest.approx(1256.6, rel=0.01)
    assert q.a_myo == pytest.approx(1570.8, rel=0.01)
    np.testing.assert_allclose(q.dim_lv, 40.0, atol=0.1)
    np.testing.assert_allclose(q.rwt, 10.0, atol=0.01)


def test_scaling_homogeneity():
    p = annulus_landmarks(center=(0, 0)).points + np.random.default_rng(0).normal(0, 0.4, (36, 2))
    q1 = lv_params_from_landmarks(LandmarkSet(p), 2.0)
    q2 = lv_params_from_landmarks(LandmarkSet(2 * p), 2.0)
    assert q2.a_lv == pytest.approx(4 * q1.a_lv, rel=1e-12)
    assert q2.a_myo == pytest.approx(4 * q1.a_myo, rel=1e-12)
    np.testing.assert_allclose(q2.dim_lv, 2 * np.array(q1.dim_lv), rtol=1e-12)
    np.testing.assert_allclose(q2.rwt, 2 * np.array(q1.rwt), rtol=1e-12)


def _raster_area(contour, px_mm, step_mm=0.25):
    # pixel-count oracle on a fine grid, in mm^2
    pts = contour.points * px_mm
    lo = pts.min(axis=0) - 1.0
    scaled = (pts - lo) / step_mm
    shape = tuple(int(v) + 2 for v in np.ceil(scaled.max(axis=0))[::-1])
    m = polygon2mask(shape, scaled[:, ::-1])
    return m.sum() * step_mm**2


def test_areas_vs_fine_raster_oracle(model_cases):
    for case, _ in model_cases[:20]:
        q = lv_params_from_landmarks(case.landmarks, 2.0)
        a_endo = _raster_area(spline_contour(case.landmarks.endo), 2.0)
        a_epi = _raster_area(spline_contour(case.landmarks.epi), 2.0)
        assert q.a_lv == pytest.approx(a_endo, rel=0.01)
        assert q.a_myo == pytest.approx(a_epi - a_endo, rel=0.01)


def test_myo_is_epi_minus_endo(model_cases):
    case = model_cases[0][0]
    q = lv_params_from_landmarks(case.landmarks, 2.0)
    a_endo = abs(polygon_area(spline_contour(case.landmarks.endo).points)) * 4
    a_epi = abs(polygon_area(spline_contour(case.landmarks.epi).points)) * 4
    assert q.a_lv == a_endo
    assert q.a_myo == a_epi - a_endo


def test_params_nonnegative_and_cavity_bound(model_cases):
    for case, _ in model_cases:
        q = lv_params_from_landmarks(case.landmarks)
        assert np.all(q.as_vector() >= 0)
        assert q.a_lv <= math.pi * (max(q.dim_lv) / 2) ** 2


@settings(max_examples=50, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(-100, 100), st.floats(-100, 100))
def test_rigid_invariance(model, theta, cx, cy):
    s = model.mean_shape
    q0 = lv_params_from_landmarks(s).as_vector()
    q1 = lv_params_from_landmarks(pose_denormalize(s, Pose(theta, (cx, cy)))).as_vector()
    np.testing.assert_allclose(q1, q0, rtol=1e-9)


def _lopsided(theta, center=(64.0, 64.0)):
    return radial_landmarks(center, theta, lambda a: 10 + 0.8 * np.cos(a), lambda a: 15 + 2.0 * np.cos(a))


def test_segment_rotation_is_cyclic_shift():
    base = np.array(lv_params_from_landmarks(_lopsided(0.0)).rwt)
    shifted = np.array(lv_params_from_landmarks(_lopsided(math.pi / 3)).rwt)
    np.testing.assert_allclose(shifted, np.roll(base, -1), atol=1e-12)


def test_mask_path_annulus():
    p = annulus_landmarks(r_endo=10, r_epi=15)
    m = mask_from_landmarks(p)
    lm, mk = lv_params_from_landmarks(p), lv_params_from_mask(m, 0.0)
    np.testing.assert_allclose(mk.rwt, lm.rwt, atol=2.0)
    np.testing.assert_allclose(mk.dim_lv, lm.dim_lv, atol=2.0)
    assert mk.a_lv == pytest.approx(lm.a_lv, rel=0.03)
    assert mk.a_myo == pytest.approx(lm.a_myo, rel=0.03)


def test_mask_path_rotation_equivariance():
    # raster slack of the mask path: one pixel (2 mm)
    m0 = mask_from_landmarks(_lopsided(0.0))
    base = np.array(lv_params_from_mask(m0, 0.0).rwt)
    # same mask, theta advanced one segment
    np.testing.assert_allclose(lv_params_from_mask(m0, math.pi / 3).rwt, np.roll(base, -1), atol=2.0)
    # mask rotated together with theta: values unchanged
    rot = radial_landmarks((64.0, 64.0), math.pi / 3, lambda a: 10 + 0.8 * np.cos(a - math.pi / 3),
                           lambda a: 15 + 2.0 * np.cos(a - math.pi / 3))
    np.testing.assert_allclose(lv_params_from_mask(mask_from_landmarks(rot), math.pi / 3).rwt, base, atol=2.0)


def test_mask_path_agrees_with_landmark_path(model_cases):
    errs = []
    for case, _ in model_cases[:20]:
        lm = lv_params_from_landmarks(case.landmarks)
        mk = lv_params_from_mask(mask_from_landmarks(case.landmarks), case.pose.theta)
        errs.append(np.abs(np.array(mk.rwt) - np.array(lm.rwt)))
    assert np.mean(errs) <= 0.5


def test_mask_landmarks_structure(model_cases):
    case = model_cases[0][0]
    p = mask_landmarks(mask_from_landmarks(case.landmarks), case.pose.theta)
    assert len(p) == 36 and p.n_endo == 18
    # endo points lie inside the epi ring along every ray
    c = p.endo.mean(axis=0)
    assert np.all(np.hypot(*(p.endo - c).T) < np.hypot(*(p.epi - c).T))


def test_flagged_mask_rejected():
    ys, xs = np.mgrid[0:64, 0:64]
    disk = np.hypot(xs - 32, ys - 32) <= 12
    with pytest.raises(UnrealisticShapeError) as info:
        lv_params_from_mask(disk, 0.0)
    assert info.value.flags == {"no_cavity"}


def test_landmark_path_errors():
    bow = np.vstack([ring((0, 0), 10), ring((0, 0), 15)])
    bow[[0, 9]] = bow[[9, 0]]
    with pytest.raises(TopologyError):
        lv_params_from_landmarks(LandmarkSet(bow))
    with pytest.raises(InvalidInputError):
        lv_params_from_landmarks(annulus_landmarks(n=16))
    with pytest.raises(InvalidInputError):
        lv_params_from_landmarks(annulus_landmarks(), pixel_size_mm=0)


def test_columns_match_vector():
    q = LVParams(1.0, 2.0, (3.0, 4.0, 5.0), (6.0, 7.0, 8.0, 9.0, 10.0, 11.0))
    assert len(LVParams.columns()) == q.as_vector().size == 11
