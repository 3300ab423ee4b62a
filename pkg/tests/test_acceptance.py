"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Lines are written with capture disabled so they appear in ``pytest -v``
output.  A criterion passes only if every part holds and the measured wall
time is inside its limit.
"""
import math
import time

import numpy as np

from myoshape.fit import fit_to_landmarks
from myoshape.geometry import LandmarkSet, Pose, pose_denormalize, pose_normalize
from myoshape.gradcheck import run_gradcheck
from myoshape.losses import loss_cc, loss_co
from myoshape.metrics import boundary_distances, bootstrap_rank_test, classify_shape, dsc, pose_errors, shape_landmark_error
from myoshape.quant import lv_params_from_landmarks, lv_params_from_mask
from myoshape.raster import distance_map_from_landmarks, mask_from_landmarks, soft_mask
from myoshape.shape_model import build_model, effective_rank, explained_variance, project, reconstruct
from myoshape.synth import SynthConfig, generate_population, normalized_shapes

from conftest import annulus_landmarks
from test_metrics import fixture_family, oracle_distances, oracle_dsc, oracle_flags


def verdict(capsys, number, parts, elapsed, limit):
    """Print the criterion line and fail the test if any part failed."""
    ok = all(v for v, _ in parts.values()) and elapsed < limit
    detail = "; ".join(f"{k}={d}{'' if v else ' (FAIL)'}" for k, (v, d) in parts.items())
    with capsys.disabled():
        print(f"\nCRITERION {number} {'PASS' if ok else 'FAIL'}: {detail}; time {elapsed:.1f}s (limit {limit}s)")
    assert ok, detail


def test_criterion_1_soft_binarization_anchor(capsys):
    t0 = time.perf_counter()
    s = soft_mask(np.array([-1.0, 1.0]), alpha=5.0)
    parts = {
        "S(-1)": (abs(s[0] - 0.99331) <= 1e-4, f"{s[0]:.5f}"),
        "S(+1)": (abs(s[1] - 0.00669) <= 1e-4, f"{s[1]:.5f}"),
    }
    verdict(capsys, 1, parts, time.perf_counter() - t0, 1)


def test_criterion_2_pca(capsys):
    t0 = time.perf_counter()
    shapes = normalized_shapes(generate_population(SynthConfig(n_cases=200)))
    model = build_model(shapes)
    k = effective_rank(model)
    coeffs = np.array([project(model, s, k) for s in shapes])
    recon = max(np.abs(reconstruct(model, b).flat - s.flat).max() for b, s in zip(coeffs, shapes))
    var_dev = np.abs(coeffs.var(axis=0, ddof=1) - 1).max()
    ev = explained_variance(model, 12)
    parts = {
        "round trip": (recon <= 1e-9, f"{recon:.2e}"),
        "unit variance": (var_dev <= 1e-6, f"{var_dev:.2e}"),
        "explained(12)": (ev >= 0.99, f"{ev:.4f}"),
    }
    verdict(capsys, 2, parts, time.perf_counter() - t0, 10)


def test_criterion_3_gradient_suite(capsys):
    t0 = time.perf_counter()
    rows = run_gradcheck(seed=0, n_configs=20)
    parts = {f"{r.term}/{r.param_block}": (r.max_rel_err <= 1e-4, f"{r.max_rel_err:.1e}") for r in rows}
    required = {"b/b", "phi/theta", "phi/c", "p/p", "D/D", "soft_dice/S", "cc/p", "cc/D", "co/D"}
    parts["coverage"] = (required <= set(parts), f"{len(required & set(parts))}/{len(required)}")
    verdict(capsys, 3, parts, time.perf_counter() - t0, 60)


def test_criterion_4_round_trips(capsys, model, frame, model_cases):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    pose_err = 0.0
    for _ in range(100):
        p = annulus_landmarks().points + rng.normal(0, 5, (36, 2))
        pose = Pose(rng.uniform(-math.pi, math.pi), rng.uniform(0, 128, 2))
        back = pose_denormalize(pose_normalize(LandmarkSet(p), pose), pose)
        pose_err = max(pose_err, np.abs(back.points - p).max())
    cc = max(loss_cc(distance_map_from_landmarks(c.landmarks, frame.spec), c.landmarks)[0] for c, _ in model_cases)
    co = 0.0
    for pose in (Pose(0.0, (63.5, 63.5)), Pose(1.2, (58.0, 70.0)), Pose(-2.5, (70.0, 61.0)), Pose(2.9, (66.0, 57.0))):
        p = pose_denormalize(model.mean_shape, pose)
        D = distance_map_from_landmarks(p, frame.spec)
        co = max(co, loss_co(D, p, model, pose.c, frame=frame, with_grad=False))
    parts = {
        "pose round trip": (pose_err <= 1e-12, f"{pose_err:.1e}"),
        "L_Cc self": (cc <= 0.05, f"{cc:.4f}"),
        "L_Co self": (co <= 0.02, f"{co:.4f}"),
    }
    verdict(capsys, 4, parts, time.perf_counter() - t0, 30)


def test_criterion_5_recovery(capsys, model, model_cases, map_fits):
    t0 = time.perf_counter()
    dc, dth, dpb = [], [], []
    for case, _ in model_cases:
        res = fit_to_landmarks(case.landmarks, model)
        e_c, e_th = pose_errors(case.pose, res.pose)
        dc.append(e_c)
        dth.append(e_th)
        dpb.append(shape_landmark_error(model, res.b, case.pose, case.landmarks))
    map_pb = [shape_landmark_error(model, r.b, c.pose, c.landmarks) for (c, _), (r, _) in zip(model_cases, map_fits["cc"])]
    map_dsc = [d for _, d in map_fits["cc"]]
    elapsed = time.perf_counter() - t0 + map_fits["seconds"]["cc"]
    parts = {
        "n": (len(dc) == 50, str(len(dc))),
        "max dc": (max(dc) <= 0.1, f"{max(dc):.3g}px"),
        "max dtheta": (max(dth) <= 0.5, f"{max(dth):.3g}deg"),
        "max dp_b": (max(dpb) <= 0.1, f"{max(dpb):.3g}px"),
        "map max dp_b": (max(map_pb) <= 0.5, f"{max(map_pb):.3g}px"),
        "map min DSC": (min(map_dsc) >= 0.90, f"{min(map_dsc):.4f}"),
    }
    verdict(capsys, 5, parts, elapsed, 300)


def test_criterion_6_consistency_direction(capsys, map_fits):
    prior = np.array([d for _, d in map_fits["prior"]])
    parts = {}
    for name in ("cc", "co"):
        better = np.array([d for _, d in map_fits[name]]) > prior
        parts[name] = (better.mean() >= 0.9, f"{better.sum()}/{better.size} better")
    elapsed = sum(map_fits["seconds"].values())
    verdict(capsys, 6, parts, elapsed, 300)


def test_criterion_7_metric_oracles(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    mismatches = 0
    for _ in range(100):
        h, w = rng.integers(2, 17, 2)
        a = rng.random((h, w)) < rng.uniform(0.1, 0.7)
        b = rng.random((h, w)) < rng.uniform(0.1, 0.7)
        a[rng.integers(h), rng.integers(w)] = b[rng.integers(h), rng.integers(w)] = True
        ok = dsc(a, b) == oracle_dsc(a, b) and boundary_distances(a, b) == oracle_distances(a, b)
        mismatches += not ok
    agree = total = 0
    for seed, kind in enumerate(["annulus", "disk", "gapped", "blob"]):
        fam_rng = np.random.default_rng(100 + seed)
        for _ in range(10):
            m, _ = fixture_family(kind, fam_rng)
            agree += classify_shape(m) == oracle_flags(m)
            total += 1
    parts = {
        "metric mismatches": (mismatches == 0, f"{mismatches}/100"),
        "classify agreement": (agree == total, f"{agree}/{total}"),
    }
    verdict(capsys, 7, parts, time.perf_counter() - t0, 30)


def test_criterion_8_quantification(capsys, model_cases):
    t0 = time.perf_counter()
    q = lv_params_from_landmarks(annulus_landmarks(r_endo=10, r_epi=15), 2.0)
    errs = []
    for case, _ in model_cases:
        lm = lv_params_from_landmarks(case.landmarks)
        mk = lv_params_from_mask(mask_from_landmarks(case.landmarks), case.pose.theta)
        errs.append(np.abs(np.array(mk.rwt) - np.array(lm.rwt)))
    mae = float(np.mean(errs))
    dim_err = np.abs(np.array(q.dim_lv) - 40.0).max()
    rwt_err = np.abs(np.array(q.rwt) - 10.0).max()
    parts = {
        "A_LV": (abs(q.a_lv / 1256.6 - 1) <= 0.01, f"{q.a_lv:.1f}"),
        "A_MYO": (abs(q.a_myo / 1570.8 - 1) <= 0.01, f"{q.a_myo:.1f}"),
        "Dim_LV": (dim_err <= 0.1, f"err {dim_err:.3g}"),
        "RWT": (rwt_err <= 0.01, f"err {rwt_err:.3g}"),
        "mask RWT MAE": (len(errs) == 50 and mae <= 0.5, f"{mae:.3f}mm over {len(errs)}"),
    }
    verdict(capsys, 8, parts, time.perf_counter() - t0, 60)


def test_criterion_9_bootstrap_calibration(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    a = rng.normal(size=100)
    p_same = bootstrap_rank_test(a, a, n_perm=10_000, seed=1)
    p_shift = bootstrap_rank_test(a + 2.0, a, n_perm=10_000, seed=1)
    rejected = 0
    for trial in range(200):
        x, y = rng.normal(size=(2, 100))
        rejected += bootstrap_rank_test(x, y, n_perm=10_000, seed=trial) < 0.05
    rate = rejected / 200
    parts = {
        "identical": (p_same == 1.0, f"p={p_same}"),
        "shifted": (p_shift < 0.001, f"p={p_shift}"),
        "null rejection": (0.02 <= rate <= 0.08, f"{rate:.3f}"),
    }
    verdict(capsys, 9, parts, time.perf_counter() - t0, 120)
