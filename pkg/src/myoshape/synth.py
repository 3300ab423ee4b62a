"""Seeded synthetic myocardium populations with known ground truth.

Each ring is a radial function ``r(phi) = R + sum_k a_k cos(k phi + psi_k)``
over harmonic orders 1..6.  Phases ``psi_k`` are fixed per population (drawn
from the seed) and amplitudes ``a_k`` are drawn per case, so the population
has one degree of freedom per ring and order.  Landmarks are taken on rays
from the cavity centroid, exactly like the model construction convention,
then jittered and placed in the image with a random pose.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, TopologyError
from .geometry import (
    Contour,
    GridSpec,
    LandmarkSet,
    Pose,
    denormalize_points,
    polygon_centroid,
    pose_normalize,
    resample_equiangular,
)
from .raster import (
    ScalarGrid,
    binarize,
    check_nested,
    distance_map_from_landmarks,
    is_simple,
    landmark_contours,
)
from .shape_model import ShapeModel, project, reconstruct_flat

MAX_RETRIES = 100
_DENSE = 720


@dataclass(frozen=True)
class SynthConfig:
    n_cases: int = 200
    endo_radius_mm: float = 20.0
    epi_radius_mm: float = 30.0
    endo_amplitudes_mm: tuple = (1.0, 2.0, 1.0, 0.6, 0.4, 0.3)
    epi_amplitudes_mm: tuple = (1.0, 1.5, 0.8, 0.5, 0.3, 0.2)
    center_range_px: float = 20.0
    theta_range: float = math.pi
    noise_sd_mm: float = 0.05
    min_wall_mm: float = 2.0
    n_endo: int = 18
    pixel_size_mm: float = 2.0
    width: int = 128
    height: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.n_cases < 1:
            raise ConfigurationError("n_cases must be positive")
        if not self.epi_radius_mm > self.endo_radius_mm > 0:
            raise ConfigurationError("need epi radius > endo radius > 0")
        for name in ("endo_amplitudes_mm", "epi_amplitudes_mm"):
            amps = tuple(float(a) for a in getattr(self, name))
            if any(a < 0 for a in amps):
                raise ConfigurationError(f"{name} must be non-negative")
            object.__setattr__(self, name, amps)
        if min(self.center_range_px, self.theta_range, self.noise_sd_mm, self.min_wall_mm) < 0:
            raise ConfigurationError("ranges and noise must be non-negative")
        if self.n_endo < 4 or self.pixel_size_mm <= 0:
            raise ConfigurationError("invalid n_endo or pixel size")

    @property
    def grid(self):
        return GridSpec(self.width, self.height, self.pixel_size_mm)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc


class SynthCase(NamedTuple):
    landmarks: LandmarkSet  # image space
    pose: Pose


def _phases(cfg: SynthConfig):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5EED]))
    n = max(len(cfg.endo_amplitudes_mm), len(cfg.epi_amplitudes_mm))
    return rng.uniform(0, 2 * math.pi, size=(2, n))


def _radial(phi, radius, amps, phases, coeffs):
    r = np.full_like(phi, radius)
    for k, (amp, psi, u) in enumerate(zip(amps, phases, coeffs), start=1):
        r += amp * u * np.cos(k * phi + psi)
    return r


def _draw_case(cfg: SynthConfig, phases, rng: np.random.Generator):
    phi = np.linspace(0, 2 * math.pi, _DENSE, endpoint=False)
    px = cfg.pixel_size_mm
    for _ in range(MAX_RETRIES):
        u_endo = rng.uniform(-1, 1, len(cfg.endo_amplitudes_mm))
        u_epi = rng.uniform(-1, 1, len(cfg.epi_amplitudes_mm))
        r_endo = _radial(phi, cfg.endo_radius_mm, cfg.endo_amplitudes_mm, phases[0], u_endo)
        r_epi = _radial(phi, cfg.epi_radius_mm, cfg.epi_amplitudes_mm, phases[1], u_epi)
        if r_endo.min() <= 0 or np.min(r_epi - r_endo) < cfg.min_wall_mm:
            continue
        endo = Contour(np.c_[r_endo * np.cos(phi), r_endo * np.sin(phi)] / px)
        epi = Contour(np.c_[r_epi * np.cos(phi), r_epi * np.sin(phi)] / px)
        center = polygon_centroid(endo.points)
        try:
            rings = [resample_equiangular(c, center, 0.0, cfg.n_endo) for c in (endo, epi)]
        except TopologyError:
            continue
        shape = np.vstack(rings) - center
        shape += rng.normal(0.0, cfg.noise_sd_mm / px, size=shape.shape)
        theta = rng.uniform(-cfg.theta_range, cfg.theta_range)
        c = cfg.grid.center + rng.uniform(-cfg.center_range_px, cfg.center_range_px, size=2)
        pose = Pose(theta, c)
        return SynthCase(LandmarkSet(denormalize_points(shape, pose.theta, pose.center), cfg.n_endo), pose)
    raise ConfigurationError(
        f"could not draw a case with endo inside epi (margin {cfg.min_wall_mm} mm) in {MAX_RETRIES} tries"
    )


def generate_population(cfg: SynthConfig) -> list:
    """``cfg.n_cases`` seeded :class:`SynthCase` tuples (image-space landmarks, pose)."""
    phases = _phases(cfg)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_cases)
    return [_draw_case(cfg, phases, np.random.default_rng(s)) for s in seeds]


def normalized_shapes(cases):
    return [pose_normalize(c.landmarks, c.pose) for c in cases]


@dataclass
class CaseBundle:
    landmarks: LandmarkSet
    pose: Pose
    b: np.ndarray
    D: ScalarGrid
    mask: np.ndarray = field(repr=False)


def make_case_bundle(case: SynthCase, model: ShapeModel, spec: GridSpec = GridSpec(), n_modes=12) -> CaseBundle:
    """Every representation of one case, all derived from the same landmarks."""
    b = project(model, pose_normalize(case.landmarks, case.pose), n_modes)
    D = distance_map_from_landmarks(case.landmarks, spec)
    return CaseBundle(case.landmarks, case.pose, b, D, binarize(D))


def model_case(model: ShapeModel, b, pose: Pose) -> SynthCase:
    """Landmarks generated exactly by the model from ``(b, pose)``."""
    s = reconstruct_flat(model, b).reshape(-1, 2)
    return SynthCase(LandmarkSet(denormalize_points(s, pose.theta, pose.center), model.n_endo), pose)


def draw_model_cases(model: ShapeModel, n, seed=0, n_modes=12, spec: GridSpec = GridSpec(),
                     b_limit=2.0, center_range_px=20.0, theta_range=math.pi):
    """Targets from known ``(b*, pose*)``: ``b*`` standard normal clipped to
    ``+-b_limit``, poses uniform around the grid centre.  Draws whose contours
    are not properly nested are redrawn."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        b = np.clip(rng.standard_normal(n_modes), -b_limit, b_limit)
        pose = Pose(rng.uniform(-theta_range, theta_range),
                    spec.center + rng.uniform(-center_range_px, center_range_px, 2))
        case = model_case(model, b, pose)
        endo, epi = landmark_contours(case.landmarks)
        try:
            check_nested(endo, epi)
        except TopologyError:
            continue
        if not (is_simple(endo) and is_simple(epi)):
            continue
        out.append((case, b))
    return out
