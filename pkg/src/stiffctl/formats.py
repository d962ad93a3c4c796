"""Trajectory/segmentation JSON and run/Pareto/summary CSV files.

Floats are written with ``repr`` so every file reads back bit-exactly. All
files are UTF-8 and newline-terminated.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Segmentation, StiffctlError, Trajectory

SEGMENT_METHODS = ("icsld", "gmm", "sld")


class SchemaError(StiffctlError):
    """A file does not match the expected layout; names the file and field."""


def _f(x) -> str:
    return repr(float(x))


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj) + "\n", encoding="utf-8")


def _read_json(path) -> dict:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(obj, dict):
        raise SchemaError(f"{path}: expected a JSON object")
    return obj


def _require(obj, keys, path):
    for k in keys:
        if k not in obj:
            raise SchemaError(f"{path}: missing field {k!r}")


# -- trajectories ------------------------------------------------------------


def trajectory_to_dict(traj: Trajectory) -> dict:
    out = {"dt": float(traj.dt), "n_axes": traj.n_axes, "x": traj.x.tolist(), "F": traj.F.tolist()}
    if traj.xdot is not None:
        out["xdot"] = traj.xdot.tolist()
    return out


def write_trajectory(path, traj: Trajectory):
    _write_json(path, trajectory_to_dict(traj))


def read_trajectory(path) -> Trajectory:
    obj = _read_json(path)
    _require(obj, ("dt", "n_axes", "x", "F"), path)
    try:
        traj = Trajectory(float(obj["dt"]), np.asarray(obj["x"], float), np.asarray(obj["F"], float),
                          None if obj.get("xdot") is None else np.asarray(obj["xdot"], float))
    except (ValueError, TypeError) as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    if traj.n_axes != int(obj["n_axes"]):
        raise SchemaError(f"{path}: field 'n_axes' is {obj['n_axes']} but rows have {traj.n_axes} columns")
    return traj


# -- segmentations -----------------------------------------------------------


@dataclass
class SegmentationFile:
    segmentation: Segmentation
    K_prior: np.ndarray
    objective: float
    method: str

    @property
    def M(self) -> int:
        return self.segmentation.M


def write_segmentation(path, seg: Segmentation, K_prior, objective: float, method: str):
    if method not in SEGMENT_METHODS:
        raise ValueError(f"unknown segmentation method {method!r}")
    _write_json(path, {
        "M": seg.M, "labels": [int(v) for v in seg.labels],
        "K_prior": np.asarray(K_prior, float).tolist(), "objective": float(objective), "method": method,
    })


def read_segmentation(path) -> SegmentationFile:
    obj = _read_json(path)
    _require(obj, ("M", "labels", "K_prior", "objective", "method"), path)
    if obj["method"] not in SEGMENT_METHODS:
        raise SchemaError(f"{path}: field 'method' must be one of {list(SEGMENT_METHODS)}, got {obj['method']!r}")
    try:
        seg = Segmentation(np.asarray(obj["labels"], int), int(obj["M"]))
    except ValueError as exc:
        raise SchemaError(f"{path}: field 'labels': {exc}") from exc
    K = np.atleast_2d(np.asarray(obj["K_prior"], float))
    if K.shape[0] != seg.M:
        raise SchemaError(f"{path}: field 'K_prior' has {K.shape[0]} rows for M={seg.M}")
    return SegmentationFile(seg, K, float(obj["objective"]), obj["method"])


# -- CSV tables ----------------------------------------------------------------


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path, expected=None, prefix=None):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if expected is not None:
        for col in expected:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
    if prefix is not None and not any(h.startswith(prefix) for h in header):
        raise SchemaError(f"{path}: no {prefix}* columns")
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise SchemaError(f"{path}: row {i + 2} has {len(r)} fields, header has {len(header)}")
    return header, body


def _column(path, header, body, name, kind=float):
    j = header.index(name)
    try:
        return np.array([kind(r[j]) for r in body])
    except ValueError as exc:
        raise SchemaError(f"{path}: column {name!r}: {exc}") from exc


RUN_COLUMNS = ("n", "y_T", "y_C", "hv", "ms")


@dataclass
class RunTable:
    """The per-iteration columns of a run CSV."""

    n: np.ndarray
    theta: np.ndarray
    y_T: np.ndarray
    y_C: np.ndarray
    hv: np.ndarray
    ms: np.ndarray

    @property
    def Y(self) -> np.ndarray:
        return np.stack([self.y_T, self.y_C], axis=1)

    def __eq__(self, other):
        if not isinstance(other, RunTable):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("n", "theta", "y_T", "y_C", "hv", "ms"))


def run_header(d: int):
    return ["n", *[f"theta_{i + 1}" for i in range(d)], "y_T", "y_C", "hv", "ms"]


def run_row(n, theta, y_T, y_C, hv, ms):
    return [str(int(n)), *map(_f, theta), _f(y_T), _f(y_C), _f(hv), _f(ms)]


def run_table(record) -> RunTable:
    return RunTable(record.n, np.asarray(record.theta), record.Y[:, 0].copy(), record.Y[:, 1].copy(),
                    np.asarray(record.hv), np.asarray(record.ms))


def write_run_csv(path, record):
    t = record if isinstance(record, RunTable) else run_table(record)
    rows = [run_row(t.n[i], t.theta[i], t.y_T[i], t.y_C[i], t.hv[i], t.ms[i]) for i in range(len(t.n))]
    _write_csv(path, run_header(t.theta.shape[1]), rows)


def read_run_csv(path) -> RunTable:
    header, body = _read_csv(path, RUN_COLUMNS, prefix="theta_")
    th_cols = sorted((h for h in header if h.startswith("theta_")), key=lambda h: int(h.split("_")[1]))
    theta = np.stack([_column(path, header, body, c) for c in th_cols], axis=1) if body else np.zeros((0, len(th_cols)))
    return RunTable(_column(path, header, body, "n", int), theta,
                    *(_column(path, header, body, c) for c in ("y_T", "y_C", "hv", "ms")))


def write_pareto_csv(path, Y, theta):
    Y, theta = np.atleast_2d(Y), np.atleast_2d(theta)
    header = ["y_T", "y_C", *[f"theta_{i + 1}" for i in range(theta.shape[1])]]
    _write_csv(path, header, [[_f(y[0]), _f(y[1]), *map(_f, th)] for y, th in zip(Y, theta)])


def read_pareto_csv(path):
    header, body = _read_csv(path, ("y_T", "y_C"))
    th_cols = sorted((h for h in header if h.startswith("theta_")), key=lambda h: int(h.split("_")[1]))
    Y = np.stack([_column(path, header, body, "y_T"), _column(path, header, body, "y_C")], axis=1) \
        if body else np.zeros((0, 2))
    theta = np.stack([_column(path, header, body, c) for c in th_cols], axis=1) if body else np.zeros((0, len(th_cols)))
    return Y, theta


SUMMARY_COLUMNS = ("method", "prior", "seed", "final_hv")


def _bool(s: str) -> bool:
    if s not in ("true", "false"):
        raise ValueError(f"expected true/false, got {s!r}")
    return s == "true"


def write_summary_csv(path, rows):
    """Rows of ``(method, prior, seed, final_hv)``."""
    _write_csv(path, SUMMARY_COLUMNS,
               [[m, "true" if p else "false", str(int(s)), _f(h)] for m, p, s, h in rows])


def read_summary_csv(path):
    header, body = _read_csv(path, SUMMARY_COLUMNS)
    out = []
    for i, r in enumerate(body):
        rec = dict(zip(header, r))
        try:
            out.append((rec["method"], _bool(rec["prior"]), int(rec["seed"]), float(rec["final_hv"])))
        except ValueError as exc:
            raise SchemaError(f"{path}: row {i + 2}: {exc}") from exc
    return out


CURVE_COLUMNS = ("n", "median", "q25", "q75", "min", "max", "runs")


def learning_curve(hv_columns):
    """Order statistics of hypervolume per ``n`` over runs of equal length."""
    H = np.asarray(hv_columns, float)
    q25, med, q75 = np.quantile(H, [0.25, 0.5, 0.75], axis=0)
    return np.arange(1, H.shape[1] + 1), med, q25, q75, H.min(axis=0), H.max(axis=0), len(H)


def write_curve_csv(path, hv_columns):
    n, med, q25, q75, lo, hi, runs = learning_curve(hv_columns)
    _write_csv(path, CURVE_COLUMNS,
               [[str(int(n[i])), _f(med[i]), _f(q25[i]), _f(q75[i]), _f(lo[i]), _f(hi[i]), str(runs)]
                for i in range(len(n))])


def read_curve_csv(path) -> dict:
    header, body = _read_csv(path, CURVE_COLUMNS)
    out = {c: _column(path, header, body, c) for c in CURVE_COLUMNS}
    out["n"] = out["n"].astype(int)
    out["runs"] = out["runs"].astype(int)
    return out


GRID_COLUMNS = ("method", "prior", "mean", "std", "median", "runs")


def grid_rows(summary_rows):
    """Per ``(method, prior)`` cell: mean, std and median final hypervolume."""
    cells = {}
    for m, p, _, h in summary_rows:
        cells.setdefault((m, p), []).append(h)
    rows = []
    for (m, p), hs in cells.items():
        h = np.asarray(hs)
        rows.append((m, p, float(h.mean()), float(h.std()), float(np.median(h)), len(h)))
    return rows


def write_grid_csv(path, rows):
    _write_csv(path, GRID_COLUMNS,
               [[m, "true" if p else "false", _f(a), _f(s), _f(md), str(int(k))] for m, p, a, s, md, k in rows])


def read_grid_csv(path):
    header, body = _read_csv(path, GRID_COLUMNS)
    out = []
    for i, r in enumerate(body):
        rec = dict(zip(header, r))
        try:
            out.append((rec["method"], _bool(rec["prior"]), float(rec["mean"]), float(rec["std"]),
                        float(rec["median"]), int(rec["runs"])))
        except ValueError as exc:
            raise SchemaError(f"{path}: row {i + 2}: {exc}") from exc
    return out


SENSITIVITY_COLUMNS = ("parameter", "value", "M", "beta", "median", "mean", "std")


def write_sensitivity_csv(path, rows):
    _write_csv(path, SENSITIVITY_COLUMNS,
               [[name, _f(v), str(int(M)), _f(b), _f(md), _f(mn), _f(sd)] for name, v, M, b, md, mn, sd in rows])


def read_sensitivity_csv(path):
    header, body = _read_csv(path, SENSITIVITY_COLUMNS)
    return [(r[0], float(r[1]), int(r[2]), float(r[3]), float(r[4]), float(r[5]), float(r[6])) for r in body]
