"""PCA point distribution model over pose-normalised landmark sets.

Shapes are flattened as interleaved ``(x0, y0, x1, y1, ...)`` vectors.  Mode
weights ``b`` are standardised: a shape is ``mean + V @ (sqrt(lambda) * b)``, so
projected training coefficients have unit sample variance per mode.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, RankError, UndefinedMetricError
from .geometry import LandmarkSet, Pose, wrap_angle

RANK_CUTOFF = 1e-12


@dataclass(frozen=True)
class ShapeModel:
    mean: np.ndarray  # (2N,)
    eigenvectors: np.ndarray  # (2N, K), orthonormal columns
    eigenvalues: np.ndarray  # (K,), descending, >= 0
    n_endo: int = 18
    pixel_size_mm: float = 2.0

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        vecs = np.asarray(self.eigenvectors, dtype=float)
        vals = np.asarray(self.eigenvalues, dtype=float).reshape(-1)
        if vecs.ndim != 2 or vecs.shape[0] != mean.size or vecs.shape[1] != vals.size:
            raise InvalidInputError("inconsistent mean / eigenvector / eigenvalue sizes")
        if mean.size != 4 * self.n_endo:
            raise InvalidInputError(f"mean has {mean.size} entries, expected {4 * self.n_endo}")
        if vals.size > mean.size:
            raise InvalidInputError("more modes than coordinates")
        if np.any(vals < 0) or np.any(np.diff(vals) > 0):
            raise InvalidInputError("eigenvalues must be non-negative and descending")
        for arr in (mean, vecs, vals):
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError("model contains non-finite values")
            arr.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "eigenvectors", vecs)
        object.__setattr__(self, "eigenvalues", vals)

    @property
    def n_modes(self):
        return self.eigenvalues.size

    @property
    def mean_shape(self):
        return LandmarkSet.from_flat(self.mean, self.n_endo)

    def scaled_modes(self, m=None):
        """Columns ``sqrt(lambda_m) * v_m`` for the first ``m`` modes."""
        m = self.n_modes if m is None else m
        return self.eigenvectors[:, :m] * np.sqrt(self.eigenvalues[:m])


def _as_flat(shape):
    if isinstance(shape, LandmarkSet):
        return shape.flat
    return np.asarray(shape, dtype=float).reshape(-1)


def build_model(shapes, n_endo=None, pixel_size_mm=2.0) -> ShapeModel:
    """Fit the PCA model to pose-normalised training shapes.

    Eigenpairs come from the SVD of the centred data matrix; eigenvalues use
    the ``1/(n-1)`` sample covariance normalisation and each eigenvector is
    signed so that its largest-magnitude entry is positive.
    """
    shapes = list(shapes)
    if len(shapes) < 2:
        raise InvalidInputError("need at least two shapes to build a model")
    if n_endo is None:
        first = shapes[0]
        n_endo = first.n_endo if isinstance(first, LandmarkSet) else _as_flat(first).size // 4
    rows = [_as_flat(s) for s in shapes]
    if len({r.size for r in rows}) != 1:
        raise InvalidInputError("training shapes have inconsistent lengths")
    data = np.vstack(rows)
    if not np.all(np.isfinite(data)):
        raise InvalidInputError("training shapes contain non-finite values")
    mean = data.mean(axis=0)
    _, sing, vt = np.linalg.svd(data - mean, full_matrices=False)
    # singular values at the rounding level of the centring are exact zeros
    noise = np.finfo(float).eps * max(np.abs(data).max(), 1.0) * data.shape[0]
    sing = np.where(sing <= noise, 0.0, sing)
    vecs = vt.T
    vals = sing**2 / (data.shape[0] - 1)
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    vecs = vecs * np.where(signs == 0, 1.0, signs)
    return ShapeModel(mean, vecs, vals, n_endo=n_endo, pixel_size_mm=pixel_size_mm)


def reconstruct(model: ShapeModel, b) -> LandmarkSet:
    """Pose-normalised shape ``mean + sum_m b_m sqrt(lambda_m) v_m``."""
    return LandmarkSet.from_flat(reconstruct_flat(model, b), model.n_endo)


def reconstruct_flat(model: ShapeModel, b):
    b = np.asarray(b, dtype=float).reshape(-1)
    if b.size > model.n_modes:
        raise InvalidInputError(f"{b.size} coefficients for a model with {model.n_modes} modes")
    if not np.all(np.isfinite(b)):
        raise InvalidInputError("shape coefficients must be finite")
    return model.mean + model.scaled_modes(b.size) @ b


def project(model: ShapeModel, s, m=None):
    """Standardised coefficients of the first ``m`` modes for shape ``s``."""
    m = model.n_modes if m is None else int(m)
    if m > model.n_modes or m < 0:
        raise InvalidInputError(f"requested {m} modes from a model with {model.n_modes}")
    vals = model.eigenvalues[:m]
    if m and np.any(vals <= RANK_CUTOFF * model.eigenvalues[0]):
        raise RankError(f"mode {int(np.argmax(vals <= RANK_CUTOFF * model.eigenvalues[0])) + 1} has zero variance")
    flat = _as_flat(s)
    if flat.size != model.mean.size:
        raise InvalidInputError("shape length does not match the model")
    return model.eigenvectors[:, :m].T @ (flat - model.mean) / np.sqrt(vals)


def effective_rank(model: ShapeModel):
    if model.n_modes == 0 or model.eigenvalues[0] == 0:
        return 0
    return int(np.sum(model.eigenvalues > RANK_CUTOFF * model.eigenvalues[0]))


def explained_variance(model: ShapeModel, m: int) -> float:
    if not 0 <= m <= model.n_modes:
        raise InvalidInputError(f"m={m} outside [0, {model.n_modes}]")
    total = model.eigenvalues.sum()
    if total <= 0:
        raise UndefinedMetricError("model has no shape variance")
    return float(model.eigenvalues[:m].sum() / total)


@dataclass(frozen=True)
class AugmentRanges:
    """Half-widths of the uniform augmentation offsets."""

    shape: float = 1.0
    position_mm: float = 40.0
    orientation: float = math.pi / 2

    def __post_init__(self):
        if min(self.shape, self.position_mm, self.orientation) < 0:
            raise InvalidInputError("augmentation ranges must be non-negative")


def augment(model: ShapeModel, b, pose: Pose, rng: np.random.Generator, ranges=AugmentRanges()):
    """Model-guided augmentation: uniform offsets on every coefficient, the
    centre (millimetres, converted with the model pixel size) and ``theta``."""
    b = np.asarray(b, dtype=float).reshape(-1)
    db = rng.uniform(-ranges.shape, ranges.shape, size=b.size) if ranges.shape else np.zeros(b.size)
    half_px = ranges.position_mm / model.pixel_size_mm
    dc = rng.uniform(-half_px, half_px, size=2) if half_px else np.zeros(2)
    dtheta = rng.uniform(-ranges.orientation, ranges.orientation) if ranges.orientation else 0.0
    new_pose = Pose(wrap_angle(pose.theta + dtheta), pose.c + dc)
    return b + db, new_pose
