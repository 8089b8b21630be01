"""Readers and writers for clock streams, trajectories, PDE grids and reports.

All writers are deterministic: fixed column order, ``repr`` floats, sorted
JSON keys and a trailing newline.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .dynamics import EventStream
from .hjsolver import GridSolution

GRID_MAGIC = b"HJGRID1\n"


def _plain(obj):
    """Recursively convert numpy scalars/arrays and tuples into JSON-ready values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(obj), encoding="utf-8")
    return path


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


# -- clocks -----------------------------------------------------------------


def save_events(path, events: EventStream) -> Path:
    """``.npy`` writes a structured array; anything else writes CSV ``line,dz,time``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".npy":
        arr = np.zeros(len(events), dtype=[("line", "<i8"), ("dz", "<i8"), ("time", "<f8")])
        arr["line"], arr["dz"], arr["time"] = events.line, events.dz, events.time
        np.save(path, arr)
        return path
    return write_csv(path, ["line", "dz", "time"], zip(events.line.tolist(), events.dz.tolist(), events.time.tolist()))


def load_events(path, seed: int = 0) -> EventStream:
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path)
        return EventStream.from_arrays(arr["line"], arr["dz"], arr["time"], seed=seed)
    rows = path.read_text().splitlines()[1:]
    data = np.loadtxt(rows, delimiter=",", ndmin=2) if rows else np.zeros((0, 3))
    return EventStream.from_arrays(data[:, 0].astype(np.int64), data[:, 1].astype(np.int64), data[:, 2], seed=seed)


# -- trajectories -----------------------------------------------------------


def write_trajectories(path, initial_heights: dict, trajectories: dict) -> Path:
    """One row per jump: ``x1,x2,time,height`` with the height just after the jump.

    Points that never move get a single row at time 0 with their initial height.
    """
    rows = []
    for x in sorted(trajectories, key=lambda p: (p[0], p[1])):
        h0 = int(initial_heights[x])
        jumps = trajectories[x]
        if len(jumps) == 0:
            rows.append((int(x[0]), int(x[1]), 0.0, h0))
        for k, t in enumerate(jumps):
            rows.append((int(x[0]), int(x[1]), float(t), h0 - k - 1))
    return write_csv(path, ["x1", "x2", "time", "height"], rows)


# -- PDE grids --------------------------------------------------------------


def save_grid(path, sol: GridSolution) -> Path:
    """Binary layout: magic, 8-byte little-endian header length, JSON header, float64 values (C order)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "dx": sol.dx,
        "dt": sol.dt,
        "origin": list(sol.origin),
        "shape": list(sol.values.shape),
        "times": sol.times.tolist(),
        "M": sol.M,
        "cushion": sol.cushion,
        "sigma": list(sol.sigma),
        "meta": _plain(sol.meta),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        fh.write(np.ascontiguousarray(sol.values, dtype="<f8").tobytes())
    return path


def load_grid(path) -> GridSolution:
    with open(path, "rb") as fh:
        if fh.read(len(GRID_MAGIC)) != GRID_MAGIC:
            raise ValueError(f"{path} is not a grid file")
        n = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(n).decode("utf-8"))
        values = np.frombuffer(fh.read(), dtype="<f8").reshape(header["shape"]).copy()
    return GridSolution(
        dx=header["dx"],
        dt=header["dt"],
        origin=tuple(header["origin"]),
        values=values,
        times=np.array(header["times"]),
        M=header["M"],
        cushion=header["cushion"],
        sigma=tuple(header["sigma"]),
        meta=header["meta"],
    )


def write_grid_csv(path, sol: GridSolution) -> Path:
    """Long format ``x1,x2,t,u``."""
    x1, x2 = sol.x1, sol.x2

    def rows():
        for n, t in enumerate(sol.times):
            for i, a in enumerate(x1):
                for j, b in enumerate(x2):
                    yield (float(a), float(b), float(t), float(sol.values[i, j, n]))

    return write_csv(path, ["x1", "x2", "t", "u"], rows())
