"""Training losses with analytic gradients.

Parameter blocks are ``b`` (shape coefficients), ``theta`` (orientation),
``c`` (centre, pixels) and ``D`` (predicted distance map).  Landmark-based
terms return a gradient with respect to the landmark coordinates; that
gradient is pulled back to ``(b, theta, c)`` with :func:`chain_landmarks`.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, InvalidInputError
from .geometry import GridSpec, LandmarkSet, Pose, rotation
from .interp import bilinear_sample, bilinear_weights, scatter_adjoint
from .raster import ScalarGrid, distance_map_from_landmarks, soft_mask
from .shape_model import ShapeModel, reconstruct_flat
from .tps import scale_factor, tps_basis, tps_system, _check_configuration

TERMS = ("b", "phi", "p", "D", "cc", "co")


@dataclass(frozen=True)
class LossWeights:
    gamma_b: float = 1.0
    gamma_phi: float = 1.0
    gamma_p: float = 1.0
    gamma_D: float = 100.0
    gamma_cc: float = 1.0
    gamma_co: float = 10.0
    mu_phi: float = 1.0
    mu_D: float = 0.1
    alpha: float = 5.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigurationError(f"{f.name} must be a finite non-negative number")
        if self.alpha <= 0:
            raise ConfigurationError("alpha must be positive")

    def gamma(self, term):
        return getattr(self, f"gamma_{term}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown weight(s): {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})

    @classmethod
    def zeros(cls, **overrides):
        base = {f"gamma_{t}": 0.0 for t in TERMS}
        base.update(overrides)
        return cls(**base)


@dataclass
class LossReport:
    total: float
    terms: dict = field(default_factory=dict)
    gradients: dict = field(default_factory=dict)


def _grid_values(D):
    return D.values if isinstance(D, ScalarGrid) else np.asarray(D, dtype=float)


def _pts(p):
    return p.points if isinstance(p, LandmarkSet) else np.asarray(p, dtype=float).reshape(-1, 2)


# -- parameter-space terms ----------------------------------------------------


def loss_b(b_t, b_p):
    """Mean squared coefficient error and its gradient w.r.t. ``b_p``."""
    b_t = np.asarray(b_t, dtype=float).reshape(-1)
    b_p = np.asarray(b_p, dtype=float).reshape(-1)
    if b_t.shape != b_p.shape:
        raise InvalidInputError("coefficient vectors differ in length")
    diff = b_t - b_p
    m = diff.size
    return float(diff @ diff / m), -2.0 / m * diff


def loss_pose(pose_t: Pose, pose_p: Pose, mu_phi: float = 1.0):
    """Cosine orientation loss plus weighted half squared centre error.

    Returns ``(value, d/dtheta_p, d/dc_p)``.
    """
    dtheta = pose_t.theta - pose_p.theta
    dc = pose_t.c - pose_p.c
    value = -math.cos(dtheta) + mu_phi * 0.5 * float(dc @ dc)
    return value, -math.sin(dtheta), -mu_phi * dc


def loss_landmarks(p_t, p_p):
    """``(1/N) ||p_t - p_p||^2`` over N landmarks; gradient w.r.t. ``p_p``."""
    pt, pp = _pts(p_t), _pts(p_p)
    if pt.shape != pp.shape:
        raise InvalidInputError("landmark sets differ in size")
    diff = pt - pp
    n = len(pt)
    return float(np.sum(diff**2) / n), -2.0 / n * diff


# -- landmark chain rule ------------------------------------------------------


def landmarks_from_params(model: ShapeModel, b, theta, center):
    """Image-space landmarks ``T^-1(mean + V sqrt(lambda) b)`` as ``(N, 2)``."""
    s = reconstruct_flat(model, b).reshape(-1, 2)
    return s @ rotation(theta) + np.asarray(center, dtype=float)


def chain_landmarks(model: ShapeModel, b, theta, grad_p):
    """Pull ``dL/dp`` back to ``(dL/db, dL/dtheta, dL/dc)``."""
    b = np.asarray(b, dtype=float).reshape(-1)
    G = np.asarray(grad_p, dtype=float).reshape(-1, 2)
    R = rotation(theta)
    grad_s = G @ R.T
    gb = model.scaled_modes(b.size).T @ grad_s.reshape(-1)
    s = reconstruct_flat(model, b).reshape(-1, 2)
    sn, cs = math.sin(theta), math.cos(theta)
    dpx = -s[:, 0] * sn - s[:, 1] * cs
    dpy = s[:, 0] * cs - s[:, 1] * sn
    gtheta = float(G[:, 0] @ dpx + G[:, 1] @ dpy)
    return gb, gtheta, G.sum(axis=0)


# -- map terms ----------------------------------------------------------------


def soft_dice(S_a, S_b):
    """Soft Dice loss ``1 - 2 sum(a b) / (sum a + sum b)``; gradient w.r.t. ``S_b``.

    Both grids all zero gives loss 1 with a zero gradient.
    """
    a, b = _grid_values(S_a), _grid_values(S_b)
    if a.shape != b.shape:
        raise InvalidInputError("soft masks differ in shape")
    denom = a.sum() + b.sum()
    if denom == 0:
        return 1.0, np.zeros_like(b)
    inter = float(np.sum(a * b))
    value = 1.0 - 2.0 * inter / denom
    grad = -2.0 * (a * denom - inter) / denom**2
    return value, grad


def loss_D(D_t, D_p, mu_D: float = 0.1, alpha: float = 5.0):
    """Soft Dice of the binarised maps plus ``mu_D`` times the per-pixel MSE."""
    dt, dp = _grid_values(D_t), _grid_values(D_p)
    if dt.shape != dp.shape:
        raise InvalidInputError("distance maps differ in shape")
    st, sp = soft_mask(dt, alpha), soft_mask(dp, alpha)
    dice, g_sp = soft_dice(st, sp)
    diff = dp - dt
    mse = float(np.mean(diff**2))
    grad = g_sp * (-alpha) * sp * (1.0 - sp) + mu_D * 2.0 * diff / diff.size
    return dice + mu_D * mse, grad


def loss_cc(D_p, p_p):
    """Mean squared distance-map value at the landmarks.

    Returns ``(value, d/dp_p (N, 2), d/dD_p)``.
    """
    dp = _grid_values(D_p)
    pts = _pts(p_p)
    n = len(pts)
    vals, dx, dy = bilinear_sample(dp, pts[:, 0], pts[:, 1], with_grad=True)
    value = float(vals @ vals / n)
    grad_p = (2.0 / n) * vals[:, None] * np.stack([dx, dy], axis=1)
    idx, wts, *_ = bilinear_weights(dp.shape, pts[:, 0], pts[:, 1])
    grad_D = scatter_adjoint(dp.shape, idx, wts, 2.0 * vals / n)
    return value, grad_p, grad_D


@dataclass(frozen=True)
class MeanShapeFrame:
    """Precomputed mean-shape reference for the overlap consistency loss.

    The mean shape is placed at the centre of a grid with the same geometry
    as the predicted map.  ``operator`` maps landmark positions ``p_p`` to the
    image-space sample location of every mean-frame pixel: a TPS with fixed
    source points (the placed mean shape) is linear in its targets.
    """

    spec: GridSpec
    alpha: float
    mean_points: np.ndarray  # pose-normalised mean shape (N, 2)
    offset: np.ndarray
    s_bar: np.ndarray  # soft mask of the mean shape, (H, W)
    operator: np.ndarray  # (H*W, N)
    mean_radius: float
    lambda_tps: float = 0.0

    def sample_locations(self, p_p):
        return self.operator @ _pts(p_p)


def mean_shape_frame(model: ShapeModel, spec: GridSpec = GridSpec(), alpha=5.0, lambda_tps=0.0):
    mean_pts = model.mean.reshape(-1, 2)
    offset = spec.center
    src = mean_pts + offset
    _check_configuration(src)
    n = len(src)
    L = tps_system(src, lambda_tps)
    Linv = np.linalg.inv(L)
    operator = tps_basis(src, spec.pixel_centers()) @ Linv[:, :n]
    placed = LandmarkSet(src, model.n_endo)
    s_bar = soft_mask(distance_map_from_landmarks(placed, spec).values, alpha)
    mean_radius = float(np.mean(np.hypot(*mean_pts.T)))
    return MeanShapeFrame(spec, float(alpha), mean_pts, offset, s_bar, operator, mean_radius, lambda_tps)


def loss_co(D_p, p_p, model: ShapeModel, c_p, alpha=5.0, frame: MeanShapeFrame = None, with_grad=True,
            grad_D=True):
    """Soft Dice between the mean-shape mask and the predicted map warped into
    mean-shape space and rescaled by :func:`scale_factor`.

    Returns ``value`` or, with ``with_grad``, ``(value, d/dD_p, d/dp_p, d/dc_p)``.
    ``grad_D=False`` skips the map gradient (returned as ``None``).
    """
    dp = _grid_values(D_p)
    if isinstance(D_p, ScalarGrid):
        spec = D_p.spec
    else:
        spec = GridSpec(dp.shape[1], dp.shape[0], model.pixel_size_mm)
    if frame is None or frame.spec.shape != spec.shape or frame.alpha != alpha:
        frame = mean_shape_frame(model, spec, alpha)
    pts = _pts(p_p)
    c = np.asarray(c_p, dtype=float).reshape(2)
    q = frame.sample_locations(pts)
    a = scale_factor(frame.mean_points, pts, c)
    if not with_grad:
        dt = bilinear_sample(dp, q[:, 0], q[:, 1])
        st = expit(-alpha * a * dt)
        return soft_dice(frame.s_bar.reshape(-1), st)[0]
    idx, wts, inside_x, inside_y, fx, fy = bilinear_weights(dp.shape, q[:, 0], q[:, 1])
    v00, v01, v10, v11 = dp.reshape(-1)[idx].T
    dt = v00 * wts[:, 0] + v01 * wts[:, 1] + v10 * wts[:, 2] + v11 * wts[:, 3]
    ddx = ((1 - fy) * (v01 - v00) + fy * (v11 - v10)) * inside_x
    ddy = ((1 - fx) * (v10 - v00) + fx * (v11 - v01)) * inside_y
    st = expit(-alpha * a * dt)
    value, g_st = soft_dice(frame.s_bar.reshape(-1), st)
    dsig = st * (1.0 - st)
    g_dt = g_st * (-alpha * a) * dsig
    grad_D = scatter_adjoint(dp.shape, idx, wts, g_dt) if grad_D else None
    grad_p = frame.operator.T @ np.stack([g_dt * ddx, g_dt * ddy], axis=1)
    # scale factor a = r_mean / mean_i |p_i - c|
    g_a = float(np.sum(g_st * (-alpha * dt) * dsig))
    rel = pts - c
    dist = np.hypot(*rel.T)
    unit = np.divide(rel, dist[:, None], out=np.zeros_like(rel), where=dist[:, None] > 0)
    da_dp = -a / dist.mean() / len(pts) * unit
    grad_p = grad_p + g_a * da_dp
    grad_c = -g_a * da_dp.sum(axis=0)
    return value, grad_D, grad_p, grad_c


# -- weighted total -----------------------------------------------------------


@dataclass
class LossInputs:
    """Everything the weighted total may need; only enabled terms are checked."""

    model: ShapeModel = None
    b_p: np.ndarray = None
    pose_p: Pose = None
    D_p: object = None
    b_t: np.ndarray = None
    pose_t: Pose = None
    p_t: object = None
    D_t: object = None
    frame: MeanShapeFrame = None


_REQUIRED = {
    "b": ("b_t", "b_p"),
    "phi": ("pose_t", "pose_p"),
    "p": ("p_t", "model", "b_p", "pose_p"),
    "D": ("D_t", "D_p"),
    "cc": ("D_p", "model", "b_p", "pose_p"),
    "co": ("D_p", "model", "b_p", "pose_p"),
}


def _co_value(inputs, weights, b, theta, center):
    pts = landmarks_from_params(inputs.model, b, theta, center)
    return loss_co(inputs.D_p, pts, inputs.model, center, weights.alpha, inputs.frame, with_grad=False)


def co_param_gradient_fd(inputs: LossInputs, weights: LossWeights, step=1e-5):
    """Central finite differences of the overlap loss w.r.t. ``(b, theta, c)``."""
    b = np.asarray(inputs.b_p, dtype=float)
    x0 = np.concatenate([b, [inputs.pose_p.theta], inputs.pose_p.c])
    grad = np.empty_like(x0)
    m = b.size
    for i in range(x0.size):
        hi, lo = x0.copy(), x0.copy()
        hi[i] += step
        lo[i] -= step
        f_hi = _co_value(inputs, weights, hi[:m], hi[m], hi[m + 1 :])
        f_lo = _co_value(inputs, weights, lo[:m], lo[m], lo[m + 1 :])
        grad[i] = (f_hi - f_lo) / (2 * step)
    return grad[:m], float(grad[m]), grad[m + 1 :]


def total_loss(inputs: LossInputs, weights: LossWeights, wrt=("b", "theta", "c", "D"), co_gradient="analytic", fd_step=1e-5):
    """Weighted sum of the enabled terms with accumulated gradients.

    Terms with zero weight are skipped entirely.  ``co_gradient`` selects the
    analytic or central-difference gradient of the overlap term w.r.t.
    ``(b, theta, c)``; its gradient w.r.t. ``D`` is always analytic.
    """
    if co_gradient not in ("analytic", "fd"):
        raise ConfigurationError("co_gradient must be 'analytic' or 'fd'")
    enabled = [t for t in TERMS if weights.gamma(t) > 0]
    for term in enabled:
        missing = [name for name in _REQUIRED[term] if getattr(inputs, name) is None]
        if missing:
            raise ConfigurationError(f"term L_{term} is enabled but {', '.join(missing)} missing")

    report = LossReport(0.0)
    grads = {}

    def add(block, value):
        if block in wrt:
            grads[block] = grads.get(block, 0.0) + value

    needs_landmarks = any(t in enabled for t in ("p", "cc", "co"))
    if needs_landmarks:
        b_p = np.asarray(inputs.b_p, dtype=float)
        theta, center = inputs.pose_p.theta, inputs.pose_p.c
        p_p = landmarks_from_params(inputs.model, b_p, theta, center)
        grad_p = np.zeros_like(p_p)

    for term in enabled:
        g = weights.gamma(term)
        if term == "b":
            value, gb = loss_b(inputs.b_t, inputs.b_p)
            add("b", g * gb)
        elif term == "phi":
            value, gth, gc = loss_pose(inputs.pose_t, inputs.pose_p, weights.mu_phi)
            add("theta", g * gth)
            add("c", g * gc)
        elif term == "p":
            value, gp = loss_landmarks(inputs.p_t, p_p)
            grad_p += g * gp
        elif term == "D":
            value, gD = loss_D(inputs.D_t, inputs.D_p, weights.mu_D, weights.alpha)
            add("D", g * gD)
        elif term == "cc":
            value, gp, gD = loss_cc(inputs.D_p, p_p)
            grad_p += g * gp
            add("D", g * gD)
        else:
            value, gD, gp, gc = loss_co(inputs.D_p, p_p, inputs.model, center, weights.alpha, inputs.frame,
                                        grad_D="D" in wrt)
            if gD is not None:
                add("D", g * gD)
            if co_gradient == "analytic":
                grad_p += g * gp
                add("c", g * gc)
            else:
                fb, fth, fc = co_param_gradient_fd(inputs, weights, fd_step)
                add("b", g * fb)
                add("theta", g * fth)
                add("c", g * fc)
        report.terms[term] = value
        report.total += g * value

    if needs_landmarks and np.any(grad_p):
        gb, gth, gc = chain_landmarks(inputs.model, b_p, theta, grad_p)
        add("b", gb)
        add("theta", gth)
        add("c", gc)
    elif needs_landmarks:
        for block, zero in (("b", np.zeros(b_p.size)), ("theta", 0.0), ("c", np.zeros(2))):
            add(block, zero)
    report.gradients = {k: (float(v) if k == "theta" else np.asarray(v, dtype=float)) for k, v in grads.items()}
    return report

