"""File formats: landmark CSV, pose/model/weights JSON, binary grids, PGM masks.

Every writer goes through a temporary file in the target directory and an
atomic rename.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .geometry import LandmarkSet, Pose
from .losses import LossWeights
from .raster import ScalarGrid
from .shape_model import ShapeModel

GRID_MAGIC = b"SDGRID 1\n"


def atomic_write(path, data):
    """Write ``bytes`` or ``str`` to ``path`` via temp file + rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: invalid JSON ({exc})") from exc


def write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write(path, buf.getvalue())


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# -- landmarks and pose ---------------------------------------------------------


def write_landmarks(path, p: LandmarkSet):
    rows = []
    for ring, pts in (("endo", p.endo), ("epi", p.epi)):
        rows += [[ring, i, repr(float(x)), repr(float(y))] for i, (x, y) in enumerate(pts)]
    write_csv(path, ["ring", "index", "x_px", "y_px"], rows)


def read_landmarks(path) -> LandmarkSet:
    rings = {"endo": {}, "epi": {}}
    try:
        for row in read_csv(path):
            rings[row["ring"]][int(row["index"])] = (float(row["x_px"]), float(row["y_px"]))
    except (KeyError, ValueError) as exc:
        raise InvalidInputError(f"{path}: malformed landmark file ({exc})") from exc
    pts = []
    for ring in ("endo", "epi"):
        idx = sorted(rings[ring])
        if idx != list(range(len(idx))):
            raise InvalidInputError(f"{path}: {ring} indices are not 0..n-1")
        pts += [rings[ring][i] for i in idx]
    if len(rings["endo"]) != len(rings["epi"]):
        raise InvalidInputError(f"{path}: endo and epi rings differ in length")
    return LandmarkSet(np.array(pts, dtype=float), len(rings["endo"]))


def pose_to_dict(pose: Pose):
    return {"theta_rad": pose.theta, "cx_px": pose.center[0], "cy_px": pose.center[1]}


def pose_from_dict(d) -> Pose:
    try:
        return Pose(float(d["theta_rad"]), (float(d["cx_px"]), float(d["cy_px"])))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed pose ({exc})") from exc


def write_pose(path, pose: Pose):
    write_json(path, pose_to_dict(pose))


def read_pose(path) -> Pose:
    return pose_from_dict(read_json(path))


# -- model ------------------------------------------------------------------


def model_to_dict(model: ShapeModel):
    return {
        "n_endo": model.n_endo,
        "pixel_size_mm": model.pixel_size_mm,
        "mean": model.mean.tolist(),
        "eigenvalues": model.eigenvalues.tolist(),
        "eigenvectors": model.eigenvectors.T.tolist(),  # one list per mode
    }


def model_from_dict(d) -> ShapeModel:
    try:
        vecs = np.array(d["eigenvectors"], dtype=float).reshape(len(d["eigenvectors"]), -1).T
        if vecs.size == 0:
            vecs = np.zeros((len(d["mean"]), 0))
        return ShapeModel(np.array(d["mean"], dtype=float), vecs, np.array(d["eigenvalues"], dtype=float),
                          int(d["n_endo"]), float(d["pixel_size_mm"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed model ({exc})") from exc


def write_model(path, model: ShapeModel):
    write_json(path, model_to_dict(model))


def read_model(path) -> ShapeModel:
    return model_from_dict(read_json(path))


def write_weights(path, weights: LossWeights):
    write_json(path, weights.to_dict())


def read_weights(path) -> LossWeights:
    return LossWeights.from_dict(read_json(path))


# -- grids and masks ----------------------------------------------------------


def grid_to_bytes(grid: ScalarGrid) -> bytes:
    header = f"{grid.width} {grid.height} {grid.pixel_size_mm!r} {grid.role}\n".encode("ascii")
    return GRID_MAGIC + header + grid.values.astype("<f4").tobytes()


def grid_from_bytes(data: bytes) -> ScalarGrid:
    if not data.startswith(GRID_MAGIC):
        raise InvalidInputError("not an SDGRID file")
    rest = data[len(GRID_MAGIC):]
    line, sep, payload = rest.partition(b"\n")
    try:
        w, h, px, role = line.decode("ascii").split()
        w, h, px = int(w), int(h), float(px)
    except ValueError as exc:
        raise InvalidInputError(f"bad grid header ({exc})") from exc
    if not sep or len(payload) != 4 * w * h:
        raise InvalidInputError(f"grid payload has {len(payload)} bytes, expected {4 * w * h}")
    values = np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(float)
    return ScalarGrid(values, px, role)


def write_grid(path, grid: ScalarGrid):
    atomic_write(path, grid_to_bytes(grid))


def read_grid(path) -> ScalarGrid:
    return grid_from_bytes(Path(path).read_bytes())


def write_mask(path, mask):
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    atomic_write(path, f"P5\n{w} {h}\n255\n".encode("ascii") + (m.astype(np.uint8) * 255).tobytes())


def read_mask(path):
    data = Path(path).read_bytes()
    # header: magic, width, height, maxval separated by whitespace (comments allowed)
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos)
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise InvalidInputError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    payload = data[pos + 1 :]
    if maxval > 255 or len(payload) != w * h:
        raise InvalidInputError(f"{path}: unsupported or truncated PGM")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w) > 0
