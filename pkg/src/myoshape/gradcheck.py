"""Finite-difference checks of every loss gradient at random configurations.

The error of one parameter block is the normwise relative error
``max|g_analytic - g_fd| / max(max|g_analytic|, max|g_fd|)`` and the reported
value is the maximum over configurations.  For map blocks only a subset of
pixels is perturbed: the largest-gradient pixels plus random ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import GridSpec, Pose
from .losses import (
    LossInputs,
    LossWeights,
    landmarks_from_params,
    loss_b,
    loss_cc,
    loss_co,
    loss_D,
    loss_landmarks,
    loss_pose,
    mean_shape_frame,
    soft_dice,
    total_loss,
)
from .raster import distance_map_from_landmarks
from .shape_model import ShapeModel, build_model
from .synth import SynthConfig, draw_model_cases, generate_population, normalized_shapes

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4
# bilinear sampling has slope kinks at pixel lines; moving (b, theta, c) moves
# every sample point, so the chain checks use a step small enough that few
# samples cross a kink
CHAIN_STEP = 1e-7


@dataclass
class CheckRow:
    term: str
    param_block: str
    max_rel_err: float


def rel_error(analytic, numeric):
    a = np.asarray(analytic, dtype=float).ravel()
    f = np.asarray(numeric, dtype=float).ravel()
    scale = max(np.abs(a).max(initial=0.0), np.abs(f).max(initial=0.0))
    if scale == 0:
        return 0.0
    return float(np.abs(a - f).max() / scale)


def fd_gradient(fn, x, step=DEFAULT_STEP, indices=None):
    """Central differences of scalar ``fn`` at ``x`` (any shape), optionally
    only at the given flat ``indices``."""
    x = np.array(x, dtype=float)
    flat = x.reshape(-1)
    idx = np.arange(flat.size) if indices is None else np.asarray(indices)
    out = np.empty(len(idx))
    for k, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + step
        hi = fn(x)
        flat[i] = old - step
        lo = fn(x)
        flat[i] = old
        out[k] = (hi - lo) / (2 * step)
    return out


def _pixel_subset(grad, rng, n_top=16, n_random=8):
    g = np.abs(np.asarray(grad).ravel())
    top = np.argsort(g)[-n_top:]
    rand = rng.choice(g.size, size=n_random, replace=False)
    return np.unique(np.concatenate([top, rand]))


def _map_pair(model, rng, spec):
    """A model case and a perturbed prediction, so the consistency losses are
    away from their minimum."""
    (case, b), = draw_model_cases(model, 1, seed=int(rng.integers(2**31)), spec=spec, center_range_px=8)
    m = b.size
    b_p = b + rng.normal(0, 0.3, m)
    pose_p = Pose(case.pose.theta + rng.normal(0, 0.1), case.pose.c + rng.normal(0, 1.0, 2))
    D = distance_map_from_landmarks(case.landmarks, spec)
    return D, b_p, pose_p


def run_gradcheck(seed=0, n_configs=20, step=DEFAULT_STEP, chain_step=CHAIN_STEP, model: ShapeModel = None, spec=GridSpec(), n_modes=12):
    """Rows ``(term, param_block, max_rel_err)`` over ``n_configs`` random configurations."""
    rng = np.random.default_rng(seed)
    if model is None:
        model = build_model(normalized_shapes(generate_population(SynthConfig(n_cases=60, seed=seed))))
    n_modes = min(n_modes, model.n_modes)
    n_lm = model.mean.size // 2
    frame = mean_shape_frame(model, spec)
    errs = {}

    def record(term, block, value):
        errs[(term, block)] = max(errs.get((term, block), 0.0), value)

    for _ in range(n_configs):
        b_t, b_p = rng.normal(size=(2, n_modes))
        g = loss_b(b_t, b_p)[1]
        record("b", "b", rel_error(g, fd_gradient(lambda x: loss_b(b_t, x)[0], b_p, step)))

        pose_t = Pose(rng.uniform(-math.pi, math.pi), rng.normal(64, 5, 2))
        th, c = rng.uniform(-math.pi, math.pi), rng.normal(64, 5, 2)
        mu = rng.uniform(0.1, 2.0)
        _, gth, gc = loss_pose(pose_t, Pose(th, c), mu)
        record("phi", "theta", rel_error(gth, fd_gradient(lambda x: loss_pose(pose_t, Pose(x[0], c), mu)[0], [th], step)))
        record("phi", "c", rel_error(gc, fd_gradient(lambda x: loss_pose(pose_t, Pose(th, x), mu)[0], c, step)))

        p_t, p_p = rng.normal(64, 20, size=(2, n_lm, 2))
        g = loss_landmarks(p_t, p_p)[1]
        record("p", "p", rel_error(g, fd_gradient(lambda x: loss_landmarks(p_t, x)[0], p_p, step)))

        D_t, D_p = rng.uniform(-3, 3, size=(2, 24, 24))
        mu_D, alpha = rng.uniform(0.01, 1.0), rng.uniform(1.0, 5.0)
        g = loss_D(D_t, D_p, mu_D, alpha)[1]
        record("D", "D", rel_error(g, fd_gradient(lambda x: loss_D(D_t, x, mu_D, alpha)[0], D_p, step)))

        S_a, S_b = rng.uniform(0, 1, size=(2, 24, 24))
        g = soft_dice(S_a, S_b)[1]
        record("soft_dice", "S", rel_error(g, fd_gradient(lambda x: soft_dice(S_a, x)[0], S_b, step)))

        D, b_c, pose_c = _map_pair(model, rng, spec)
        dv = D.values
        pts = landmarks_from_params(model, b_c, pose_c.theta, pose_c.c)
        _, gp, gD = loss_cc(dv, pts)
        record("cc", "p", rel_error(gp, fd_gradient(lambda x: loss_cc(dv, x)[0], pts, step)))
        sub = _pixel_subset(gD, rng)
        record("cc", "D", rel_error(gD.ravel()[sub], fd_gradient(lambda x: loss_cc(x, pts)[0], dv, step, sub)))

        _, gD, _, _ = loss_co(dv, pts, model, pose_c.c, frame=frame)
        sub = _pixel_subset(gD, rng)
        fd = fd_gradient(lambda x: loss_co(x, pts, model, pose_c.c, frame=frame, with_grad=False), dv, step, sub)
        record("co", "D", rel_error(gD.ravel()[sub], fd))

        # chain through (b, theta, c); checked jointly because single small
        # components (the overlap term barely depends on theta) are dominated
        # by bilinear-kink noise in the differences
        inputs = LossInputs(model=model, b_p=b_c, pose_p=pose_c, D_p=D, p_t=pts + rng.normal(0, 1, pts.shape),
                            frame=frame)
        x0 = np.concatenate([b_c, [pose_c.theta], pose_c.c])
        for name, weights in (("total", LossWeights.zeros(gamma_p=1.0, gamma_cc=1.0)),
                              ("co", LossWeights.zeros(gamma_co=1.0))):
            rep = total_loss(inputs, weights, wrt=("b", "theta", "c"))

            def f(x, weights=weights):
                inp = LossInputs(model=model, b_p=x[:n_modes], pose_p=Pose(x[n_modes], x[n_modes + 1 :]), D_p=D,
                                 p_t=inputs.p_t, frame=frame)
                return total_loss(inp, weights, wrt=()).total

            analytic = np.concatenate([rep.gradients["b"], [rep.gradients["theta"]], rep.gradients["c"]])
            record(name, "b+theta+c", rel_error(analytic, fd_gradient(f, x0, chain_step)))
    return [CheckRow(t, b, e) for (t, b), e in errs.items()]


def passed(rows, tol=DEFAULT_TOL):
    return all(r.max_rel_err <= tol for r in rows)
