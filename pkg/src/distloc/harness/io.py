"""CSV and JSON persistence of run results."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .simulation import RunResults

ERROR_HEADER = ["step", "edge_src", "edge_dst", "err_x", "err_y"]


def _fmt(x: float) -> str:
    # repr round-trips a float64 exactly
    return repr(float(x))


def write_csv(results: Optional[RunResults], path) -> Path:
    """Parameter errors of one run, one row per (step, directed edge).

    Steps count from 1. For a scalar state ``err_y`` is left empty.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ERROR_HEADER)
        if results is None:
            return path
        err = results.theta_err
        for n in range(err.shape[0]):
            for e, (i, j) in enumerate(results.edges):
                row = err[n, e]
                ey = _fmt(row[1]) if row.shape[0] > 1 else ""
                w.writerow([n + 1, i, j, _fmt(row[0]), ey])
    return path


def read_error_csv(path) -> list:
    """Rows of a parameter-error CSV as ``(step, src, dst, err_x, err_y)`` with floats."""
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            ey = float(row["err_y"]) if row["err_y"] != "" else None
            out.append((int(row["step"]), row["edge_src"], row["edge_dst"], float(row["err_x"]), ey))
    return out


def write_series_csv(path, columns: dict) -> Path:
    """Equal-length named columns, one row per entry."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    cols = [np.asarray(columns[k]) for k in names]
    if len({len(c) for c in cols}) > 1:
        raise ValueError("columns differ in length")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([v if isinstance(v, (int, np.integer)) else _fmt(v) for v in row])
    return path


def write_rmse_csv(path, rmse: Sequence[float], start_step: int = 0) -> Path:
    steps = np.arange(start_step, start_step + len(rmse))
    return write_series_csv(path, {"step": steps, "rmse": rmse})


def write_tracking_csv(path, results: RunResults) -> Path:
    """Per-step position error of every node's filtered mean."""
    cols = {"step": np.arange(1, results.track_err.shape[0] + 1)}
    for k, v in enumerate(results.nodes):
        cols[f"node_{v}"] = results.track_err[:, k]
    return write_series_csv(path, cols)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def summarize(results: Iterable[RunResults], config=None) -> dict:
    runs = []
    for r in results:
        diag = {k: v for k, v in r.diagnostics.items() if k != "theta_history"}
        runs.append({
            "run": r.run,
            "final_theta": {f"{i}->{j}": r.theta_final[e] for e, (i, j) in enumerate(r.edges)},
            "final_max_abs_error": float(np.abs(r.theta_err[-1]).max()) if r.theta_err.size else 0.0,
            "alpha": r.alpha,
            "diagnostics": diag,
        })
    out = {"runs": runs}
    if config is not None:
        out["config"] = config.to_dict()
    return _jsonable(out)


def write_summary(path, results: Iterable[RunResults], config=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summarize(results, config), indent=2))
    return path
