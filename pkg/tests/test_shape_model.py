import math

import numpy as np
import pytest

from myoshape.errors import InvalidInputError, RankError, UndefinedMetricError
from myoshape.geometry import LandmarkSet, Pose
from myoshape.shape_model import (
    AugmentRanges,
    ShapeModel,
    augment,
    build_model,
    effective_rank,
    explained_variance,
    project,
    reconstruct,
)
from myoshape.synth import normalized_shapes

from conftest import annulus_landmarks


def test_two_shape_pca():
    s1 = annulus_landmarks(center=(0, 0))
    s2 = LandmarkSet(s1.points * 1.1 + 0.3)
    m = build_model([s1, s2])
    np.testing.assert_allclose(m.mean, (s1.flat + s2.flat) / 2, atol=1e-12)
    d = s1.flat - s2.flat
    assert m.eigenvalues[0] == pytest.approx(d @ d / 2, rel=1e-12)
    assert np.all(m.eigenvalues[1:] <= 1e-20)
    assert abs(m.eigenvectors[:, 0] @ d) == pytest.approx(np.linalg.norm(d), rel=1e-12)
    assert effective_rank(m) == 1


def test_identical_shapes():
    s = annulus_landmarks(center=(0, 0))
    m = build_model([s] * 10)
    np.testing.assert_allclose(m.mean, s.flat, atol=1e-12)
    assert np.all(m.eigenvalues == 0)
    with pytest.raises(UndefinedMetricError):
        explained_variance(m, 1)
    with pytest.raises(RankError):
        project(m, s, 1)


def test_eigen_structure(model):
    v = model.eigenvectors
    np.testing.assert_allclose(v.T @ v, np.eye(v.shape[1]), atol=1e-9)
    assert np.all(np.diff(model.eigenvalues) <= 0)
    pivots = v[np.argmax(np.abs(v), axis=0), np.arange(v.shape[1])]
    assert np.all(pivots > 0)


def test_reconstruct_examples(model):
    np.testing.assert_array_equal(reconstruct(model, np.zeros(12)).flat, model.mean)
    e1 = np.zeros(12)
    e1[0] = 1.0
    expected = model.mean + math.sqrt(model.eigenvalues[0]) * model.eigenvectors[:, 0]
    np.testing.assert_allclose(reconstruct(model, e1).flat, expected, atol=1e-12)


def test_project_left_inverse(model):
    rng = np.random.default_rng(0)
    b0 = rng.normal(size=12)
    np.testing.assert_allclose(project(model, reconstruct(model, b0), 12), b0, atol=1e-9)
    np.testing.assert_allclose(project(model, model.mean_shape, 12), 0.0, atol=1e-12)


def test_full_rank_round_trip(model, population):
    k = effective_rank(model)
    for s in normalized_shapes(population):
        np.testing.assert_allclose(reconstruct(model, project(model, s, k)).flat, s.flat, atol=1e-9)


def test_training_coefficients_unit_variance(model, population):
    k = effective_rank(model)
    coeffs = np.array([project(model, s, k) for s in normalized_shapes(population)])
    np.testing.assert_allclose(coeffs.var(axis=0, ddof=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(coeffs.mean(axis=0), 0.0, atol=1e-9)


def test_residual_decreases_with_modes(model, population):
    s = normalized_shapes(population)[7]
    res = [np.linalg.norm(s.flat - reconstruct(model, project(model, s, m)).flat) for m in range(0, 30)]
    assert all(b <= a + 1e-12 for a, b in zip(res, res[1:]))


def test_explained_variance(model):
    ev = [explained_variance(model, m) for m in range(model.n_modes + 1)]
    assert ev[0] == 0.0
    assert ev[-1] == pytest.approx(1.0, abs=1e-12)
    assert all(b >= a for a, b in zip(ev, ev[1:]))
    assert ev[12] >= 0.99


def test_model_validation():
    with pytest.raises(InvalidInputError):
        ShapeModel(np.zeros(72), np.zeros((72, 2)), np.array([1.0, 2.0]))
    with pytest.raises(InvalidInputError):
        ShapeModel(np.zeros(70), np.zeros((70, 1)), np.array([1.0]))
    with pytest.raises(InvalidInputError):
        build_model([annulus_landmarks()])


def test_augment_zero_ranges(model):
    b = np.arange(12) / 10
    pose = Pose(0.5, (60, 70))
    b2, pose2 = augment(model, b, pose, np.random.default_rng(0), AugmentRanges(0, 0, 0))
    np.testing.assert_array_equal(b2, b)
    assert pose2 == pose


def test_augment_deterministic(model):
    out = [augment(model, np.zeros(12), Pose(0, (64, 64)), np.random.default_rng(5)) for _ in range(2)]
    np.testing.assert_array_equal(out[0][0], out[1][0])
    assert out[0][1] == out[1][1]


def test_augment_statistics(model):
    rng = np.random.default_rng(1)
    draws = np.array([augment(model, np.zeros(12), Pose(0, (64, 64)), rng)[0] for _ in range(100_000 // 12)])
    flat = draws.ravel()
    assert abs(flat.mean()) <= 0.01
    assert flat.min() >= -1 and flat.max() <= 1
    # 40 mm at 2 mm/px is 20 px
    _, pose = augment(model, np.zeros(12), Pose(0, (64, 64)), rng)
    assert np.all(np.abs(pose.c - 64) <= 20)
