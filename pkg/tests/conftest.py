import math
import time

import numpy as np
import pytest

from myoshape.geometry import GridSpec, LandmarkSet
from myoshape.losses import mean_shape_frame
from myoshape.shape_model import build_model
from myoshape.synth import SynthConfig, draw_model_cases, generate_population, normalized_shapes


def ring(center, radius, n=18, theta=0.0):
    a = theta + 2 * math.pi * np.arange(n) / n
    return np.asarray(center, dtype=float) + radius * np.c_[np.cos(a), np.sin(a)]


def annulus_landmarks(center=(63.5, 63.5), r_endo=10.0, r_epi=15.0, n=18, theta=0.0):
    return LandmarkSet(np.vstack([ring(center, r_endo, n, theta), ring(center, r_epi, n, theta)]), n)


@pytest.fixture(scope="session")
def population():
    return generate_population(SynthConfig())


@pytest.fixture(scope="session")
def model(population):
    return build_model(normalized_shapes(population))


@pytest.fixture(scope="session")
def spec():
    return GridSpec()


@pytest.fixture(scope="session")
def frame(model, spec):
    return mean_shape_frame(model, spec)


@pytest.fixture(scope="session")
def model_cases(model):
    """50 targets generated by the model from known (b*, pose*)."""
    return draw_model_cases(model, 50, seed=11)


@pytest.fixture(scope="session")
def map_fits(model, frame, model_cases):
    """Distance-map fits of the 50 model cases under three weight sets.

    Every fit starts at the true pose with b = 0.  Returns a dict of lists of
    ``(FitResult, dsc)`` keyed by ``prior``, ``cc`` and ``co``, where dsc
    compares the fitted contour mask with binarize(D_t).  ``seconds`` holds the
    wall time spent on each weight set.
    """
    from myoshape.fit import MAP_WEIGHTS, OVERLAP_WEIGHTS, PRIOR_WEIGHTS, FitConfig, fit_to_distance_map
    from myoshape.losses import landmarks_from_params
    from myoshape.metrics import dsc
    from myoshape.raster import binarize, distance_map_from_landmarks, mask_from_landmarks

    runs = {"prior": (PRIOR_WEIGHTS, 2000), "cc": (MAP_WEIGHTS, 2000), "co": (OVERLAP_WEIGHTS, 200)}
    out = {k: [] for k in runs}
    out["seconds"] = dict.fromkeys(runs, 0.0)
    for case, _ in model_cases:
        D_t = distance_map_from_landmarks(case.landmarks, frame.spec)
        truth = binarize(D_t)
        for name, (weights, iters) in runs.items():
            t0 = time.perf_counter()
            cfg = FitConfig(weights=weights, init="provided", init_pose=case.pose, max_iters=iters)
            res = fit_to_distance_map(D_t, model, cfg, frame=frame)
            p = LandmarkSet(landmarks_from_params(model, res.b, res.pose.theta, res.pose.c), model.n_endo)
            out[name].append((res, dsc(mask_from_landmarks(p, frame.spec), truth)))
            out["seconds"][name] += time.perf_counter() - t0
    return out
