"""Recover shape coefficients and pose by direct optimisation of the losses.

This is the desk-scale stand-in for the network's regression head: instead of
predicting ``(b, theta, c)`` from an image, the parameters are optimised
against a target (landmarks or a distance map).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, DivergenceError, InvalidInputError
from .geometry import LandmarkSet, Pose, wrap_angle
from .losses import LossInputs, LossWeights, mean_shape_frame, total_loss
from .optim import AdamConfig, AdamState, optimizer_step
from .raster import ScalarGrid, binarize
from .shape_model import ShapeModel

MIN_SCALE = 2.0**-30
RECOVER = 1.25

INIT_POLICIES = ("mean-shape", "provided", "random-within-model")

LANDMARK_WEIGHTS = LossWeights.zeros(gamma_p=1.0)
# consistency fit: contour term plus weak priors that pin theta (which the
# map cannot determine) and keep b near the model mean
_PRIORS = dict(gamma_phi=0.1, gamma_b=1e-3, mu_phi=0.01)
MAP_WEIGHTS = LossWeights.zeros(gamma_cc=1.0, **_PRIORS)
OVERLAP_WEIGHTS = LossWeights.zeros(gamma_co=10.0, **_PRIORS)
PRIOR_WEIGHTS = LossWeights.zeros(**_PRIORS)  # baseline without consistency terms


@dataclass(frozen=True)
class FitConfig:
    weights: LossWeights = None
    n_modes: int = 12
    max_iters: int = 2000
    lr_b: float = 0.02
    lr_pose: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    tol: float = 1e-8
    patience: int = 20
    grad_tol: float = 1e-10
    init: str = "mean-shape"
    init_b: tuple = None
    init_pose: Pose = None
    seed: int = 0
    co_gradient: str = "analytic"
    monotone: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be positive")
        if not self.tol > 0:
            raise ConfigurationError("tol must be positive")
        if self.init not in INIT_POLICIES:
            raise ConfigurationError(f"init must be one of {INIT_POLICIES}")
        if self.init == "provided" and self.init_pose is None:
            raise ConfigurationError("init='provided' needs init_pose")
        if self.n_modes < 0 or min(self.lr_b, self.lr_pose) <= 0:
            raise ConfigurationError("invalid n_modes or step sizes")

    def adam(self, scale=1.0):
        lr = np.concatenate([np.full(self.n_modes, self.lr_b), np.full(3, self.lr_pose)])
        return AdamConfig(scale * lr, self.beta1, self.beta2, self.eps)


@dataclass
class FitResult:
    b: np.ndarray
    pose: Pose
    trace: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    rejected_steps: int = 0

    @property
    def final_loss(self):
        return self.trace[-1]["total"] if self.trace else math.nan

    def to_dict(self):
        return {
            "b": self.b.tolist(),
            "pose": {"theta_rad": self.pose.theta, "cx_px": self.pose.center[0], "cy_px": self.pose.center[1]},
            "trace": self.trace,
            "converged": self.converged,
            "iterations": self.iterations,
            "rejected_steps": self.rejected_steps,
        }


def _initial_params(cfg: FitConfig, model: ShapeModel, default_pose: Pose):
    m = cfg.n_modes
    if m > model.n_modes:
        raise ConfigurationError(f"n_modes={m} exceeds the model's {model.n_modes} modes")
    if cfg.init == "provided":
        b = np.zeros(m) if cfg.init_b is None else np.asarray(cfg.init_b, dtype=float)
        if b.shape != (m,):
            raise ConfigurationError("init_b does not match n_modes")
        pose = cfg.init_pose
    elif cfg.init == "random-within-model":
        b = np.random.default_rng(cfg.seed).uniform(-1, 1, m)
        pose = cfg.init_pose or default_pose
    else:
        b = np.zeros(m)
        pose = cfg.init_pose or default_pose
    return np.concatenate([b, [pose.theta], pose.c])


def _split(x, m):
    return x[:m], Pose(x[m], x[m + 1 :])


def _entry(report):
    return {"total": float(report.total), **{k: float(v) for k, v in report.terms.items()}}


def _gradient(report, m):
    g = report.gradients
    return np.concatenate([
        np.asarray(g.get("b", np.zeros(m)), dtype=float).reshape(m),
        [g.get("theta", 0.0)],
        np.asarray(g.get("c", np.zeros(2)), dtype=float).reshape(2),
    ])


def _optimize(objective, x0, cfg: FitConfig):
    """Adam descent with a monotone safeguard.

    Every candidate step is evaluated before it is taken.  With
    ``cfg.monotone`` a step that raises the total is rejected: the first moment
    is reset (momentum restart) and the step scale halved, recovering by
    ``RECOVER`` after each accepted step.  ``max_iters`` bounds the number of
    objective evaluations; the trace holds the accepted iterates only.
    """
    m = cfg.n_modes
    state = AdamState.init(x0)
    report = objective(state.params)
    trace = [_entry(report)]
    if not math.isfinite(trace[0]["total"]):
        raise DivergenceError("non-finite loss at the initial parameters", trace)
    converged = False
    streak = 0
    scale = 1.0
    rejected = 0
    evaluations = 1
    while evaluations < cfg.max_iters:
        grad = _gradient(report, m)
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"non-finite gradient at iteration {len(trace) - 1}", trace)
        if np.linalg.norm(grad) <= cfg.grad_tol:
            converged = True
            break
        cand = optimizer_step(state, grad, cfg.adam(scale))
        params = cand.params.copy()
        params[m] = wrap_angle(params[m])
        cand = replace(cand, params=params)
        new = objective(cand.params)
        evaluations += 1
        entry = _entry(new)
        if not math.isfinite(entry["total"]):
            raise DivergenceError(f"non-finite loss at iteration {len(trace)}", trace + [entry])
        if cfg.monotone and entry["total"] > trace[-1]["total"]:
            rejected += 1
            scale *= 0.5
            state = replace(state, m=np.zeros_like(state.m))
            if scale < MIN_SCALE:
                converged = True  # no decrease left at float resolution
                break
            continue
        streak = streak + 1 if abs(trace[-1]["total"] - entry["total"]) < cfg.tol else 0
        state, report = cand, new
        trace.append(entry)
        scale = min(1.0, scale * RECOVER)
        if streak >= cfg.patience:
            converged = True
            break
    b, pose = _split(state.params, m)
    return FitResult(b.copy(), pose, trace, converged, len(trace), rejected)


def fit_to_landmarks(p_t: LandmarkSet, model: ShapeModel, cfg: FitConfig = FitConfig()) -> FitResult:
    """Minimise the landmark loss over ``(b, theta, c)``."""
    if not isinstance(p_t, LandmarkSet):
        p_t = LandmarkSet(p_t, model.n_endo)
    if len(p_t) != model.mean.size // 2:
        raise InvalidInputError("target landmark count does not match the model")
    weights = cfg.weights or LANDMARK_WEIGHTS
    default_pose = Pose(0.0, p_t.points.mean(axis=0))
    x0 = _initial_params(cfg, model, default_pose)
    m = cfg.n_modes

    def objective(x):
        b, pose = _split(x, m)
        inputs = LossInputs(model=model, b_p=b, pose_p=pose, p_t=p_t, b_t=np.zeros(m), pose_t=default_pose)
        return total_loss(inputs, weights, wrt=("b", "theta", "c"))

    return _optimize(objective, x0, cfg)


def mask_centroid(D: ScalarGrid):
    fg = binarize(D)
    if not fg.any():
        raise InvalidInputError("target distance map has no foreground")
    ys, xs = np.nonzero(fg)
    return np.array([xs.mean(), ys.mean()])


def fit_to_distance_map(D_t: ScalarGrid, model: ShapeModel, cfg: FitConfig = FitConfig(), frame=None) -> FitResult:
    """Fit ``(b, theta, c)`` so the model contour agrees with a fixed map.

    Uses the contour (``gamma_cc``) and overlap (``gamma_co``) consistency
    terms with the map as the prediction, plus optional priors: ``gamma_phi``
    pulls the pose towards the initial pose and ``gamma_b`` pulls ``b``
    towards the mean shape.
    """
    if not isinstance(D_t, ScalarGrid):
        D_t = ScalarGrid(D_t, model.pixel_size_mm, "distance_map")
    weights = cfg.weights or MAP_WEIGHTS
    if weights.gamma_p or weights.gamma_D:
        raise ConfigurationError("landmark and map-similarity terms need ground truth; not usable here")
    if not any((weights.gamma_cc, weights.gamma_co, weights.gamma_phi, weights.gamma_b)):
        raise ConfigurationError("all fitting weights are zero")
    default_pose = Pose(0.0, mask_centroid(D_t))
    x0 = _initial_params(cfg, model, default_pose)
    m = cfg.n_modes
    prior_pose = Pose(x0[m], x0[m + 1 :])
    if weights.gamma_co and frame is None:
        frame = mean_shape_frame(model, D_t.spec, weights.alpha)

    def objective(x):
        b, pose = _split(x, m)
        inputs = LossInputs(model=model, b_p=b, pose_p=pose, D_p=D_t, b_t=np.zeros(m), pose_t=prior_pose, frame=frame)
        return total_loss(inputs, weights, wrt=("b", "theta", "c"), co_gradient=cfg.co_gradient)

    return _optimize(objective, x0, cfg)


