"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure,
64 usage error.  Failures print a JSON object to stderr.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import xml.etree.ElementTree as ET
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from skimage.measure import find_contours

from . import __version__
from . import io as mio
from .errors import InvalidInputError, MyoshapeError, NumericalError
from .fit import FitConfig, fit_to_distance_map, fit_to_landmarks
from .geometry import GridSpec, LandmarkSet, pose_normalize
from .gradcheck import DEFAULT_TOL, run_gradcheck
from .losses import landmarks_from_params
from .metrics import bootstrap_rank_test, dsc, evaluate_masks, mae_and_correlation
from .quant import LVParams, lv_params_from_landmarks, lv_params_from_mask
from .raster import distance_map_from_landmarks, landmark_contours, mask_from_landmarks
from .shape_model import build_model, effective_rank, explained_variance, reconstruct
from .synth import SynthConfig, generate_population, make_case_bundle, normalized_shapes

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2, 64
LANDMARK_SUFFIX = ".landmarks.csv"
POSE_SUFFIX = ".pose.json"
GRID_SUFFIX = ".grid"
MASK_SUFFIX = ".pgm"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


# -- helpers -------------------------------------------------------------------


def resolve_seed(seed):
    if seed is not None:
        return seed
    env = os.environ.get("MYOSHAPE_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError as exc:
        raise InvalidInputError(f"MYOSHAPE_SEED is not an integer: {env!r}") from exc


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def write_manifest(out_dir, command, inputs, config, seed, started):
    mio.write_json(Path(out_dir) / "manifest.json", {
        "command": command,
        "inputs": [str(p) for p in inputs],
        "config_hash": config_hash(config),
        "seed": seed,
        "version": __version__,
        "started": started,
        "finished": _now(),
    })


def _now():
    return datetime.now(timezone.utc).isoformat()


def _cases(directory, suffix):
    directory = Path(directory)
    if not directory.is_dir():
        raise InvalidInputError(f"{directory} is not a directory")
    found = {p.name[: -len(suffix)]: p for p in sorted(directory.glob(f"*{suffix}"))}
    if not found:
        raise InvalidInputError(f"no *{suffix} files in {directory}")
    return found


def _pmap(fn, items, jobs):
    items = list(items)
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _fmt(x):
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _grid_spec(args):
    return GridSpec(args.width, args.height, args.pixel_size)


# -- commands -------------------------------------------------------------------


def cmd_model_build(args):
    started = _now()
    landmarks = _cases(args.shapes, LANDMARK_SUFFIX)
    shapes = []
    for case_id, path in landmarks.items():
        p = mio.read_landmarks(path)
        pose_path = Path(args.shapes) / f"{case_id}{POSE_SUFFIX}"
        shapes.append(pose_normalize(p, mio.read_pose(pose_path)) if pose_path.exists() else p)
    model = build_model(shapes, pixel_size_mm=args.pixel_size)
    mio.write_model(args.out, model)
    write_manifest(Path(args.out).parent, "model build", [args.shapes], vars_config(args), None, started)
    print(json.dumps({"n_shapes": len(shapes), "n_modes": model.n_modes}))


def cmd_model_sample(args):
    started = _now()
    seed = resolve_seed(args.seed)
    model = mio.read_model(args.model)
    m = min(args.modes, effective_rank(model))
    rng = np.random.default_rng(seed)
    out = Path(args.out_dir)
    for i in range(args.n):
        b = np.clip(rng.standard_normal(m), -args.limit, args.limit)
        mio.write_landmarks(out / f"sample_{i:04d}{LANDMARK_SUFFIX}", reconstruct(model, b))
    write_manifest(out, "model sample", [args.model], vars_config(args), seed, started)


def cmd_model_variance(args):
    model = mio.read_model(args.model)
    print(repr(explained_variance(model, args.m)))


def cmd_synth(args):
    started = _now()
    cfg = SynthConfig.from_dict(mio.read_json(args.config)) if args.config else SynthConfig()
    if args.seed is not None or "MYOSHAPE_SEED" in os.environ:
        cfg = SynthConfig.from_dict({**cfg.to_dict(), "seed": resolve_seed(args.seed)})
    cases = generate_population(cfg)
    model = build_model(normalized_shapes(cases), pixel_size_mm=cfg.pixel_size_mm)
    out = Path(args.out_dir)
    mio.write_model(out / "model.json", model)
    n_modes = min(args.modes, effective_rank(model))

    def emit(item):
        i, case = item
        bundle = make_case_bundle(case, model, cfg.grid, n_modes)
        stem = out / f"case_{i:04d}"
        mio.write_landmarks(f"{stem}{LANDMARK_SUFFIX}", bundle.landmarks)
        mio.write_pose(f"{stem}{POSE_SUFFIX}", bundle.pose)
        mio.write_json(f"{stem}.b.json", bundle.b.tolist())
        mio.write_grid(f"{stem}{GRID_SUFFIX}", bundle.D)
        mio.write_mask(f"{stem}{MASK_SUFFIX}", bundle.mask)

    _pmap(emit, enumerate(cases), args.jobs)
    write_manifest(out, "synth", [args.config] if args.config else [], cfg.to_dict(), cfg.seed, started)
    print(json.dumps({"n_cases": len(cases), "out_dir": str(out)}))


def cmd_rasterize(args):
    started = _now()
    p = mio.read_landmarks(args.landmarks)
    spec = _grid_spec(args)
    mio.write_grid(args.out, distance_map_from_landmarks(p, spec))
    if args.mask:
        mio.write_mask(args.mask, mask_from_landmarks(p, spec))
    write_manifest(Path(args.out).parent, "rasterize", [args.landmarks], vars_config(args), None, started)


def cmd_fit(args):
    started = _now()
    seed = resolve_seed(args.seed)
    model = mio.read_model(args.model)
    weights = mio.read_weights(args.weights) if args.weights else None
    init_pose = mio.read_pose(args.init_pose) if args.init_pose else None
    init = "provided" if init_pose is not None else args.init
    cfg = FitConfig(weights=weights, n_modes=min(args.modes, effective_rank(model)), max_iters=args.max_iters,
                    tol=args.tol, init=init, init_pose=init_pose, seed=seed)
    target = Path(args.target)
    if target.name.endswith(".csv"):
        result = fit_to_landmarks(mio.read_landmarks(target), model, cfg)
    else:
        result = fit_to_distance_map(mio.read_grid(target), model, cfg)
    out = result.to_dict()
    out["landmarks"] = landmarks_from_params(model, result.b, result.pose.theta, result.pose.c).tolist()
    mio.write_json(args.out, out)
    if args.landmarks_out:
        mio.write_landmarks(args.landmarks_out, LandmarkSet(np.array(out["landmarks"]), model.n_endo))
    write_manifest(Path(args.out).parent, "fit", [args.target, args.model], vars_config(args), seed, started)
    print(json.dumps({"converged": result.converged, "iterations": result.iterations,
                      "final_loss": result.final_loss}))


def cmd_eval(args):
    started = _now()
    pred = _cases(args.pred, MASK_SUFFIX)
    truth = _cases(args.truth, MASK_SUFFIX)
    missing = sorted(set(pred) - set(truth))
    if missing:
        raise InvalidInputError(f"no truth mask for {missing}")

    def row(case_id):
        rep = evaluate_masks(mio.read_mask(pred[case_id]), mio.read_mask(truth[case_id]))
        r = rep.to_row()
        return [case_id, _fmt(r["dsc"]), _fmt(r["mbe_px"]), _fmt(r["hd_px"]), r["flags"]]

    rows = _pmap(row, sorted(pred), args.jobs)
    mio.write_csv(args.out, ["case_id", "dsc", "mbe_px", "hd_px", "flags"], rows)
    write_manifest(Path(args.out).parent, "eval", [args.pred, args.truth], vars_config(args), None, started)


def _read_param_csv(path):
    out = {}
    for row in mio.read_csv(path):
        if row["case_id"] in ("MAE", "rho"):
            continue
        out[row["case_id"]] = np.array([float(row[c]) for c in LVParams.columns()])
    return out


def cmd_quant(args):
    started = _now()
    if bool(args.landmarks) == bool(args.masks):
        raise InvalidInputError("give exactly one of --landmarks or --masks")
    if args.landmarks:
        files = _cases(args.landmarks, LANDMARK_SUFFIX)

        def params(case_id):
            return lv_params_from_landmarks(mio.read_landmarks(files[case_id]), args.pixel_size)
    else:
        if not args.poses:
            raise InvalidInputError("--masks needs --poses for the orientation")
        files = _cases(args.masks, MASK_SUFFIX)
        poses = _cases(args.poses, POSE_SUFFIX)

        def params(case_id):
            if case_id not in poses:
                raise InvalidInputError(f"no pose for {case_id}")
            return lv_params_from_mask(mio.read_mask(files[case_id]), mio.read_pose(poses[case_id]).theta,
                                       args.pixel_size)

    ids = sorted(files)
    values = _pmap(lambda c: params(c).as_vector(), ids, args.jobs)
    rows = [[c, *map(_fmt, v)] for c, v in zip(ids, values)]
    if args.truth:
        truth = _read_param_csv(args.truth)
        common = [i for i in ids if i in truth]
        if len(common) < 2:
            raise InvalidInputError("need at least two cases in common with the truth file")
        pred = np.array([values[ids.index(i)] for i in common])
        ref = np.array([truth[i] for i in common])
        stats = [mae_and_correlation(ref[:, k], pred[:, k]) for k in range(ref.shape[1])]
        rows.append(["MAE", *(_fmt(s[0]) for s in stats)])
        rows.append(["rho", *(_fmt(s[1]) for s in stats)])
    mio.write_csv(args.out, ["case_id", *LVParams.columns()], rows)
    write_manifest(Path(args.out).parent, "quant", [args.landmarks or args.masks], vars_config(args), None, started)


def _numeric_columns(rows):
    cols = {}
    for row in rows:
        for key, val in row.items():
            if key == "case_id":
                continue
            try:
                cols.setdefault(key, {})[row["case_id"]] = float(val)
            except (TypeError, ValueError):
                cols[key] = None
    return {k: v for k, v in cols.items() if v is not None}


def cmd_stats(args):
    started = _now()
    seed = resolve_seed(args.seed)
    data = _numeric_columns([r for r in mio.read_csv(args.input) if r["case_id"] not in ("MAE", "rho")])
    base = _numeric_columns([r for r in mio.read_csv(args.baseline) if r["case_id"] not in ("MAE", "rho")]) \
        if args.baseline else {}
    rows = []
    for metric, vals in data.items():
        x = np.array([v for v in vals.values() if math.isfinite(v)])
        mean = float(x.mean()) if x.size else math.nan
        std = float(x.std(ddof=1)) if x.size > 1 else math.nan
        p = ""
        if metric in base:
            common = [c for c in vals if c in base[metric] and math.isfinite(vals[c]) and math.isfinite(base[metric][c])]
            if len(common) >= 2:
                p = _fmt(bootstrap_rank_test([vals[c] for c in common], [base[metric][c] for c in common],
                                             args.n_perm, seed))
        rows.append([metric, _fmt(mean), _fmt(std), p])
    mio.write_csv(args.out, ["metric", "mean", "std", "p_value_vs_baseline"], rows)
    write_manifest(Path(args.out).parent, "stats", [args.input] + ([args.baseline] if args.baseline else []),
                   vars_config(args), seed, started)


def cmd_gradcheck(args):
    seed = resolve_seed(args.seed)
    rows = run_gradcheck(seed, args.configs)
    lines = ["term,param_block,max_rel_err"] + [f"{r.term},{r.param_block},{r.max_rel_err!r}" for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        mio.atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if all(r.max_rel_err <= args.tol for r in rows) else EXIT_NUMERIC


# -- report ---------------------------------------------------------------------

COLORS = {"truth": "red", "contour": "cyan", "map": "yellow"}


def _polyline(points, color):
    pts = " ".join(f"{x:.3f},{y:.3f}" for x, y in points)
    return f'<polygon points="{pts}" fill="none" stroke="{color}" stroke-width="0.5"/>'


def overlay_svg(shape, truth: LandmarkSet, contour: LandmarkSet = None, map_mask=None, label=""):
    """SVG with ground truth (red), contour path (cyan) and map path (yellow)."""
    h, w = shape
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{4 * w}" height="{4 * h}" viewBox="0 0 {w} {h}">',
             f'<rect x="0" y="0" width="{w}" height="{h}" fill="black"/>']
    for name, lm in (("truth", truth), ("contour", contour)):
        if lm is not None:
            parts += [_polyline(c.points, COLORS[name]) for c in landmark_contours(lm)]
    if map_mask is not None:
        padded = np.pad(np.asarray(map_mask, dtype=float), 1)
        parts += [_polyline(c[:, ::-1] - 1.0, COLORS["map"]) for c in find_contours(padded, 0.5)]
    parts.append(f'<text x="2" y="8" font-size="6" fill="white">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_report(args):
    started = _now()
    truth = _cases(args.truth, LANDMARK_SUFFIX)
    contour = _cases(args.contour, LANDMARK_SUFFIX) if args.contour else {}
    maps = _cases(args.map, MASK_SUFFIX) if args.map else {}
    if not contour and not maps:
        raise InvalidInputError("report needs --contour and/or --map results")
    spec = _grid_spec(args)
    out = Path(args.out_dir)
    rows = []
    for case_id, path in truth.items():
        p_t = mio.read_landmarks(path)
        m_t = mask_from_landmarks(p_t, spec)
        p_c = mio.read_landmarks(contour[case_id]) if case_id in contour else None
        m_m = mio.read_mask(maps[case_id]) if case_id in maps else None
        if p_c is None and m_m is None:
            continue
        d_c = dsc(mask_from_landmarks(p_c, spec), m_t) if p_c is not None else math.nan
        d_m = dsc(m_m, m_t) if m_m is not None else math.nan
        label = " ".join(f"{k} DSC {v:.2f}" for k, v in (("contour", d_c), ("map", d_m)) if math.isfinite(v))
        mio.atomic_write(out / f"{case_id}.svg", overlay_svg(spec.shape, p_t, p_c, m_m, label))
        rows.append([case_id, _fmt(d_c), _fmt(d_m)])
    if not rows:
        raise InvalidInputError("no case has both truth and results")
    mio.write_csv(out / "report_cases.csv", ["case_id", "dsc_contour", "dsc_map"], rows)
    summary = []
    for k, name in ((1, "dsc_contour"), (2, "dsc_map")):
        x = np.array([float(r[k]) for r in rows])
        x = x[np.isfinite(x)]
        if x.size:
            summary.append([name, _fmt(x.mean()), _fmt(x.std(ddof=1) if x.size > 1 else math.nan), str(x.size)])
    mio.write_csv(out / "report_summary.csv", ["metric", "mean", "std", "n"], summary)
    write_manifest(out, "report", [a for a in (args.truth, args.contour, args.map) if a], vars_config(args),
                   None, started)


def validate_svg(text):
    """Parse the SVG; raises on malformed XML."""
    return ET.fromstring(text)


# -- parser -----------------------------------------------------------------------


def vars_config(args):
    return {k: v for k, v in vars(args).items() if k not in ("func", "jobs")}


def _add_grid(p):
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--pixel-size", type=float, default=2.0)


def build_parser():
    parser = _Parser(prog="myoshape", description="Myocardium shape model, losses, fitting and evaluation.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    model = sub.add_parser("model", help="build, sample or inspect a shape model")
    msub = model.add_subparsers(dest="model_command", parser_class=_Parser)
    p = msub.add_parser("build")
    p.add_argument("--shapes", required=True, help="directory of *.landmarks.csv (with optional *.pose.json)")
    p.add_argument("--out", required=True)
    p.add_argument("--pixel-size", type=float, default=2.0)
    p.set_defaults(func=cmd_model_build)
    p = msub.add_parser("sample")
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--modes", type=int, default=12)
    p.add_argument("--limit", type=float, default=2.0, help="clip coefficients to +-limit SD")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_model_sample)
    p = msub.add_parser("variance")
    p.add_argument("--model", required=True)
    p.add_argument("--m", type=int, required=True)
    p.set_defaults(func=cmd_model_variance)

    p = sub.add_parser("synth", help="generate a synthetic population")
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--modes", type=int, default=12)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("rasterize", help="signed distance map (and mask) from landmarks")
    p.add_argument("--landmarks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask")
    _add_grid(p)
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("fit", help="fit shape and pose to landmarks (.csv) or a distance map")
    p.add_argument("--target", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--weights")
    p.add_argument("--out", required=True)
    p.add_argument("--landmarks-out")
    p.add_argument("--init", default="mean-shape", choices=["mean-shape", "random-within-model"])
    p.add_argument("--init-pose")
    p.add_argument("--modes", type=int, default=12)
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="DSC, MBE, HD and flags of predicted masks")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("quant", help="LV parameters from landmarks or masks")
    p.add_argument("--landmarks")
    p.add_argument("--masks")
    p.add_argument("--poses")
    p.add_argument("--truth")
    p.add_argument("--out", required=True)
    p.add_argument("--pixel-size", type=float, default=2.0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_quant)

    p = sub.add_parser("stats", help="per-metric mean, SD and rank test against a baseline")
    p.add_argument("--input", required=True)
    p.add_argument("--baseline")
    p.add_argument("--out", required=True)
    p.add_argument("--n-perm", type=int, default=100_000)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("gradcheck", help="finite-difference check of all loss gradients")
    p.add_argument("--seed", type=int)
    p.add_argument("--configs", type=int, default=20)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="SVG overlays and summary CSV")
    p.add_argument("--truth", required=True)
    p.add_argument("--contour")
    p.add_argument("--map")
    p.add_argument("--out-dir", required=True)
    _add_grid(p)
    p.set_defaults(func=cmd_report)
    return parser


def _fail(code, exc):
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            raise UsageError(parser.format_help())
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be positive")
        code = args.func(args)
        return EXIT_OK if code is None else code
    except UsageError as exc:
        sys.stderr.write(str(exc) + "\n")
        return EXIT_USAGE
    except NumericalError as exc:
        return _fail(EXIT_NUMERIC, exc)
    except (MyoshapeError, ValueError, OSError) as exc:
        return _fail(EXIT_INVALID, exc)


if __name__ == "__main__":
    sys.exit(main())
