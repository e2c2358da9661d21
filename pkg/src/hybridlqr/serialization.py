"""Config documents and output artifacts (CSV trajectories, JSON reports)."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .hybrid_system import HybridTrajectory


def fmt(v) -> str:
    """17 significant digits, enough to round-trip any double."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return doc


def apply_overrides(doc: dict, assignments) -> dict:
    """``KEY=JSON`` assignments replace top-level fields (bare strings allowed)."""
    doc = dict(doc)
    for item in assignments or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form KEY=VALUE")
        try:
            doc[key] = json.loads(raw)
        except json.JSONDecodeError:
            doc[key] = raw
    return doc


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")


def trajectory_rows(traj: HybridTrajectory, n: int, m: int):
    header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)]
    header += [f"u{i + 1}" for i in range(m)] + ["jump", "beating_depth", "branch"]
    rows = []
    for k, arc in enumerate(traj.arcs):
        jump = traj.jumps[k - 1] if k > 0 and k - 1 < len(traj.jumps) else None
        for i in range(len(arc.t)):
            row = [fmt(arc.t[i])] + [fmt(v) for v in arc.x[i]]
            row += [fmt(v) for v in arc.p[i]] if arc.p is not None else ["nan"] * n
            if m:
                row += [fmt(v) for v in arc.u[i]] if arc.u is not None else ["nan"] * m
            first = i == 0 and jump is not None
            row += ["1" if first else "0", str(jump.beating_depth) if first else "0", jump.branch if first else ""]
            rows.append(row)
    return header, rows


def write_trajectory_csv(path, traj: HybridTrajectory, n: int, m: int) -> None:
    """One row per sample; the first sample after each reset carries ``jump = 1``."""
    header, rows = trajectory_rows(traj, n, m)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_table_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating, int, np.integer)) and not isinstance(v, bool) else v for v in row])
