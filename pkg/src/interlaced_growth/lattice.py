"""Particle configurations, height functions and the bijections between them.

Coordinates
-----------
Particles live on horizontal lines ``l``; horizontal positions are stored
doubled (``dz = 2 z``), so ``dz % 2 == l % 2``.  Heights live on the dual
lattice, whose point ``(x1, x2)`` sits on line ``x2 - x1`` at doubled
horizontal coordinate ``x1 + x2 - 1``.  The particle site between ``x`` and
``x + (1, 1)`` is ``(x2 - x1, x1 + x2)``.

Labels
------
Particles on line ``l`` are labelled by consecutive integers, aligned across
lines so that ``z(p, l) < z(p, l+1) < z(p+1, l)``.  With that alignment the
height is ``h(x) = x1 - p(x)``, where ``p(x)`` is the label of the rightmost
particle to the left of ``x`` on its line.  A :class:`ParticleArray` stores,
per line, ``label_offset`` = the label of the last particle left of the
stored window, so the ``i``-th stored particle has label
``label_offset + 1 + i``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple

import numpy as np

__all__ = [
    "AdmissibilityError",
    "AdmissibilityReport",
    "HeightField",
    "ParticleArray",
    "SiteCoord",
    "TilingCell",
    "WindowError",
    "check_admissible",
    "export_tiling",
    "height_from_particles",
    "particles_from_height",
    "site_to_line_pos",
    "tiling_to_csv",
    "tiling_to_json",
]

TILE_KINDS = ("vertical", "left", "right")


class WindowError(ValueError):
    """A requested point is not covered by the stored window."""


class AdmissibilityError(ValueError):
    def __init__(self, message: str, location=None):
        super().__init__(message)
        self.location = location


class SiteCoord(NamedTuple):
    x1: int
    x2: int

    @property
    def line(self) -> int:
        return self.x2 - self.x1

    @property
    def doubled_z(self) -> int:
        return self.x1 + self.x2 - 1


def site_to_line_pos(x) -> tuple[int, int]:
    """Line index and doubled horizontal coordinate of a dual-lattice point."""
    x1, x2 = int(x[0]), int(x[1])
    return x2 - x1, x1 + x2 - 1


def dual_point(line, doubled_zbar):
    """Inverse of :func:`site_to_line_pos` (vectorised)."""
    line = np.asarray(line)
    d = np.asarray(doubled_zbar)
    return (d + 1 - line) // 2, (d + 1 + line) // 2


def left_of_site(line, dz):
    """Dual point immediately left of the particle site ``(line, dz)``."""
    line = np.asarray(line)
    dz = np.asarray(dz)
    return (dz - line) // 2, (dz + line) // 2


# ---------------------------------------------------------------------------
# Height fields


@dataclass(frozen=True, eq=False)
class HeightField:
    """Integer heights on the box ``origin + [0, n1) x [0, n2)`` of the dual lattice."""

    origin: SiteCoord
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", SiteCoord(*map(int, self.origin)))
        vals = np.asarray(self.values)
        if vals.ndim != 2:
            raise ValueError("height values must be a 2-D array")
        object.__setattr__(self, "values", vals.astype(np.int64, copy=False))

    @classmethod
    def from_gradients(cls, origin, origin_height: int, grad1, grad2) -> "HeightField":
        """Integrate gradient arrays; ``grad1`` has shape ``(n1-1, n2)``, ``grad2`` ``(n1, n2-1)``."""
        g1 = np.asarray(grad1, dtype=np.int64)
        g2 = np.asarray(grad2, dtype=np.int64)
        n1, n2 = g1.shape[0] + 1, g2.shape[1] + 1
        if g1.shape != (n1 - 1, n2) or g2.shape != (n1, n2 - 1):
            raise ValueError("gradient arrays have inconsistent shapes")
        # closed-circuit consistency on every plaquette
        lhs = g1[:, :-1] + g2[1:, :]
        rhs = g2[:-1, :] + g1[:, 1:]
        bad = np.argwhere(lhs != rhs)
        if len(bad):
            i, j = bad[0]
            raise AdmissibilityError(
                f"gradients are not curl-free at plaquette {(int(i), int(j))}",
                location=(int(i), int(j)),
            )
        values = np.empty((n1, n2), dtype=np.int64)
        values[0, 0] = origin_height
        values[1:, 0] = origin_height + np.cumsum(g1[:, 0])
        values[:, 1:] = values[:, :1] + np.cumsum(g2, axis=1)
        return cls(origin, values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def origin_height(self) -> int:
        return int(self.values[0, 0])

    @property
    def grad1(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    @property
    def grad2(self) -> np.ndarray:
        return np.diff(self.values, axis=1)

    @property
    def diag(self) -> np.ndarray:
        return self.values[1:, 1:] - self.values[:-1, :-1]

    @property
    def box(self) -> tuple[SiteCoord, SiteCoord]:
        n1, n2 = self.shape
        return self.origin, SiteCoord(self.origin.x1 + n1 - 1, self.origin.x2 + n2 - 1)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        n1, n2 = self.shape
        return np.meshgrid(
            np.arange(self.origin.x1, self.origin.x1 + n1),
            np.arange(self.origin.x2, self.origin.x2 + n2),
            indexing="ij",
        )

    def contains(self, x1, x2):
        (a1, a2), (b1, b2) = self.box
        x1 = np.asarray(x1)
        x2 = np.asarray(x2)
        return (x1 >= a1) & (x1 <= b1) & (x2 >= a2) & (x2 <= b2)

    def at(self, x1, x2):
        if not np.all(self.contains(x1, x2)):
            raise WindowError("point outside the height window")
        out = self.values[np.asarray(x1) - self.origin.x1, np.asarray(x2) - self.origin.x2]
        return int(out) if np.ndim(out) == 0 else out

    def shifted(self, c: int) -> "HeightField":
        return HeightField(self.origin, self.values + int(c))

    def __eq__(self, other) -> bool:
        if not isinstance(other, HeightField):
            return NotImplemented
        return self.origin == other.origin and np.array_equal(self.values, other.values)

    def to_csv(self, path) -> None:
        x1, x2 = self.coords()
        rows = np.column_stack([x1.ravel(), x2.ravel(), self.values.ravel()])
        np.savetxt(path, rows, fmt="%d", delimiter=",", header="x1,x2,h", comments="")

    @classmethod
    def from_csv(cls, path) -> "HeightField":
        data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
        x1, x2, h = data.T
        a1, a2 = x1.min(), x2.min()
        values = np.zeros((x1.max() - a1 + 1, x2.max() - a2 + 1), dtype=np.int64)
        values[x1 - a1, x2 - a2] = h
        return cls(SiteCoord(int(a1), int(a2)), values)


@dataclass(frozen=True)
class AdmissibilityReport:
    ok: bool
    kind: str = ""
    location: tuple | None = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.ok


def _runs_of_ones(seq: np.ndarray) -> tuple[int, int]:
    """Longest run of ones in a 1-D 0/1 sequence and the index where it starts."""
    best, start, cur, cur_start = 0, -1, 0, 0
    for k, v in enumerate(seq):
        if v == 1:
            if cur == 0:
                cur_start = k
            cur += 1
            if cur > best:
                best, start = cur, cur_start
        else:
            cur = 0
    return best, start


def check_admissible(h: HeightField, M: int | None = None) -> AdmissibilityReport:
    """First violation of the height-function constraints, or success.

    Checks partial and diagonal increments are in ``{0, 1}``; with ``M``,
    also that no line carries ``M`` consecutive empty sites (a gap ``> M``).
    """
    ox1, ox2 = h.origin
    for kind, arr in (("grad1", h.grad1), ("grad2", h.grad2), ("diag", h.diag)):
        bad = np.argwhere((arr < 0) | (arr > 1))
        if len(bad):
            i, j = map(int, bad[0])
            return AdmissibilityReport(
                False, kind, (ox1 + i, ox2 + j),
                f"{kind} increment {int(arr[i, j])} at {(ox1 + i, ox2 + j)}",
            )
    if M is not None:
        d = h.diag
        n1, n2 = d.shape
        for off in range(-(n1 - 1), n2):
            seq = np.diagonal(d, offset=off)
            run, start = _runs_of_ones(seq)
            if run >= M:
                i = start + max(-off, 0)
                j = start + max(off, 0)
                return AdmissibilityReport(
                    False, "gap", (ox1 + i, ox2 + j),
                    f"{run} consecutive empty sites on line {off + ox2 - ox1} "
                    f"(gap exceeds M={M})",
                )
    return AdmissibilityReport(True)


# ---------------------------------------------------------------------------
# Particle arrays


@dataclass(frozen=True, eq=False)
class ParticleArray:
    """Finite window of an interlaced configuration.

    ``lines[l]`` holds the sorted doubled positions of every particle whose
    position lies in the inclusive range ``bounds[l]``.  Lines listed in
    ``frozen`` never move (ghost lines at the window edge).
    """

    lines: dict
    bounds: dict
    label_offset: dict
    frozen: frozenset = frozenset()
    box: tuple | None = field(default=None)

    def __post_init__(self):
        lines = {int(l): np.asarray(p, dtype=np.int64) for l, p in self.lines.items()}
        object.__setattr__(self, "lines", dict(sorted(lines.items())))
        object.__setattr__(
            self, "bounds", {int(l): (int(a), int(b)) for l, (a, b) in self.bounds.items()}
        )
        object.__setattr__(
            self, "label_offset", {int(l): int(o) for l, o in self.label_offset.items()}
        )
        object.__setattr__(self, "frozen", frozenset(int(l) for l in self.frozen))
        if set(self.lines) != set(self.bounds) or set(self.lines) != set(self.label_offset):
            raise ValueError("lines, bounds and label_offset must share keys")

    # -- construction --------------------------------------------------------

    @classmethod
    def from_height_function(
        cls,
        height: Callable,
        bounds: dict,
        frozen: Iterable[int] = (),
        box=None,
    ) -> "ParticleArray":
        """Read particles off a height function ``height(x1, x2)`` (vectorised).

        ``bounds[l] = (lo, hi)`` is the inclusive doubled-position range to
        store on line ``l``; the endpoints are snapped to the line's parity.
        ``hi = lo - 2`` stores no sites but still pins the height at the
        single dual point ``lo - 1``.
        A particle sits at ``(l, dz)`` exactly where the diagonal increment
        across the site vanishes.
        """
        lines, out_bounds, offsets = {}, {}, {}
        for l, (lo, hi) in bounds.items():
            l = int(l)
            lo = lo + ((lo - l) % 2)
            hi = hi - ((hi - l) % 2)
            if hi < lo - 2:
                raise ValueError(f"invalid range on line {l}")
            dz = np.arange(lo, hi + 1, 2, dtype=np.int64)
            a1, a2 = left_of_site(l, dz)
            inc = np.asarray(height(a1 + 1, a2 + 1), dtype=np.int64) - np.asarray(
                height(a1, a2), dtype=np.int64
            )
            bad = np.flatnonzero((inc < 0) | (inc > 1))
            if len(bad):
                k = bad[0]
                raise AdmissibilityError(
                    f"diagonal increment {int(inc[k])} at plaquette {(int(a1[k]), int(a2[k]))}",
                    location=(int(a1[k]), int(a2[k])),
                )
            lines[l] = dz[inc == 0]
            out_bounds[l] = (int(lo), int(hi))
            f1, f2 = left_of_site(l, np.array([lo]))
            offsets[l] = int(f1[0]) - int(np.asarray(height(f1, f2)).ravel()[0])
        return cls(lines, out_bounds, offsets, frozenset(frozen), box)

    @classmethod
    def rectangle(cls, height: Callable, line_range, dz_range, frozen_edges=True, **kw):
        """Rectangular window; with ``frozen_edges`` the outer lines are ghosts."""
        l0, l1 = line_range
        bounds = {l: dz_range for l in range(l0, l1 + 1)}
        frozen = {l0, l1} if frozen_edges else set()
        return cls.from_height_function(height, bounds, frozen, **kw)

    # -- derived quantities --------------------------------------------------

    @property
    def line_range(self) -> tuple[int, int]:
        ks = list(self.lines)
        return ks[0], ks[-1]

    @property
    def window(self) -> tuple[int, int, int, int]:
        l0, l1 = self.line_range
        lo = min(b[0] for b in self.bounds.values())
        hi = max(b[1] for b in self.bounds.values())
        return l0, l1, lo, hi

    @property
    def n_particles(self) -> int:
        return int(sum(len(p) for p in self.lines.values()))

    def labels(self, line: int) -> np.ndarray:
        return self.label_offset[line] + 1 + np.arange(len(self.lines[line]))

    def position(self, p: int, line: int) -> int | None:
        i = p - self.label_offset[line] - 1
        pos = self.lines[line]
        return int(pos[i]) if 0 <= i < len(pos) else None

    def covers(self, x1, x2) -> np.ndarray:
        x1 = np.atleast_1d(np.asarray(x1, dtype=np.int64))
        x2 = np.atleast_1d(np.asarray(x2, dtype=np.int64))
        line = x2 - x1
        d = x1 + x2 - 1
        out = np.zeros(x1.shape, dtype=bool)
        for l in np.unique(line):
            if int(l) not in self.bounds:
                continue
            lo, hi = self.bounds[int(l)]
            m = line == l
            out[m] = (d[m] >= lo - 1) & (d[m] <= hi + 1)
        return out

    def height_at(self, x1, x2):
        """Height ``x1 - p(x)`` at dual points inside the window (vectorised)."""
        scalar = np.ndim(x1) == 0 and np.ndim(x2) == 0
        x1 = np.atleast_1d(np.asarray(x1, dtype=np.int64))
        x2 = np.atleast_1d(np.asarray(x2, dtype=np.int64))
        x1, x2 = np.broadcast_arrays(x1, x2)
        if not self.covers(x1, x2).all():
            raise WindowError("height requested outside the particle window")
        line = x2 - x1
        d = x1 + x2 - 1
        p = np.empty(x1.shape, dtype=np.int64)
        for l in np.unique(line):
            m = line == l
            p[m] = self.label_offset[int(l)] + np.searchsorted(
                self.lines[int(l)], d[m], side="left"
            )
        h = x1 - p
        return int(h[0]) if scalar else h

    def max_gap(self) -> int:
        """Largest doubled distance between consecutive stored particles."""
        gaps = [int(np.diff(p).max()) for p in self.lines.values() if len(p) > 1]
        return max(gaps, default=0)

    def check(self) -> list[str]:
        """All violated invariants (empty list when the window is valid)."""
        errs = []
        for l, pos in self.lines.items():
            lo, hi = self.bounds[l]
            if len(pos) == 0:
                continue
            if np.any(np.diff(pos) <= 0):
                errs.append(f"line {l}: positions not strictly increasing")
            if np.any((pos - l) % 2 != 0):
                errs.append(f"line {l}: parity violated")
            if pos[0] < lo or pos[-1] > hi:
                errs.append(f"line {l}: particle outside bounds {lo, hi}")
        for l in self.lines:
            if l + 1 not in self.lines:
                continue
            errs.extend(self._check_pair(l))
        return errs

    def _covered_points(self, l: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.bounds[l]
        d = np.arange(lo - 1, hi + 2, 2, dtype=np.int64)
        return dual_point(l, d)

    def _check_pair(self, l: int) -> list[str]:
        a, b = self.lines[l], self.lines[l + 1]
        oa, ob = self.label_offset[l], self.label_offset[l + 1]
        errs = []
        # aligned labels: z(p, l) < z(p, l+1) < z(p+1, l)
        p_lo = max(oa, ob) + 1
        p_hi = min(oa + len(a), ob + len(b))
        if p_hi >= p_lo:
            za = a[p_lo - oa - 1 : p_hi - oa]
            zb = b[p_lo - ob - 1 : p_hi - ob]
            bad = np.flatnonzero(za >= zb)
            if len(bad):
                errs.append(f"z({p_lo + int(bad[0])},{l}) < z(.,{l + 1}) violated")
        p_lo = max(oa - 1, ob) + 1
        p_hi = min(oa + len(a) - 1, ob + len(b))
        if p_hi >= p_lo:
            zb = b[p_lo - ob - 1 : p_hi - ob]
            za = a[p_lo - oa : p_hi - oa + 1]
            bad = np.flatnonzero(zb >= za)
            if len(bad):
                errs.append(f"z({p_lo + int(bad[0])},{l + 1}) < z(.+1,{l}) violated")
        # unit height steps across the two lines (catches missing particles)
        for src, step in ((l, (0, 1)), (l + 1, (1, 0))):
            x1, x2 = self._covered_points(src)
            y1, y2 = x1 + step[0], x2 + step[1]
            ok = self.covers(y1, y2)
            if not ok.any():
                continue
            x1, x2, y1, y2 = x1[ok], x2[ok], y1[ok], y2[ok]
            g = self.height_at(y1, y2) - self.height_at(x1, x2)
            bad = np.flatnonzero((g < 0) | (g > 1))
            if len(bad):
                k = bad[0]
                errs.append(
                    f"height step {int(g[k])} between {(int(x1[k]), int(x2[k]))} "
                    f"and {(int(y1[k]), int(y2[k]))}"
                )
        return errs

    def validate(self) -> None:
        errs = self.check()
        if errs:
            raise AdmissibilityError("; ".join(errs[:5]))


def height_from_particles(cfg: ParticleArray, origin_height: int | None = None, box=None) -> HeightField:
    """Height field of ``cfg`` on ``box`` (defaults to ``cfg.box``).

    Heights follow the labels (``h = x1 - p(x)``); ``origin_height`` re-anchors
    the field so that its lower-left corner takes that value.
    """
    box = box if box is not None else cfg.box
    if box is None:
        raise WindowError("no height box given and the configuration carries none")
    (a1, a2), (b1, b2) = box
    x1, x2 = np.meshgrid(np.arange(a1, b1 + 1), np.arange(a2, b2 + 1), indexing="ij")
    if not cfg.covers(x1.ravel(), x2.ravel()).all():
        raise WindowError(f"height window {box} not covered by the particle window")
    vals = cfg.height_at(x1.ravel(), x2.ravel()).reshape(x1.shape)
    if origin_height is not None:
        vals = vals - vals[0, 0] + int(origin_height)
    return HeightField(SiteCoord(a1, a2), vals)


def particles_from_height(h: HeightField) -> ParticleArray:
    """Particles sit where the diagonal increment of ``h`` vanishes.

    Each line gets the range of sites whose two diagonal neighbours both lie
    in the height window; labels are chosen so that the round trip through
    :func:`height_from_particles` reproduces ``h`` exactly.
    """
    report = check_admissible(h)
    if not report:
        raise AdmissibilityError(report.detail, location=report.location)
    (a1, a2), (b1, b2) = h.box
    bounds = {}
    for l in range(a2 - b1, b2 - a1 + 1):
        lo1 = max(a1, a2 - l)
        hi1 = min(b1 - 1, b2 - 1 - l)
        bounds[l] = (2 * lo1 + l, 2 * hi1 + l)
    return ParticleArray.from_height_function(h.at, bounds, box=h.box)


# ---------------------------------------------------------------------------
# Rhombus tilings


class TilingCell(NamedTuple):
    kind: str
    anchor: SiteCoord

    @property
    def line(self) -> int:
        return self.anchor.line

    @property
    def doubled_z(self) -> int:
        # the particle site to the right of the anchor dual point
        return self.anchor.x1 + self.anchor.x2

    def vertices(self) -> list[tuple[float, float]]:
        """Corners in (horizontal, line) units; lines are ``sqrt(3)/2`` apart when drawn."""
        l, z = self.line, self.doubled_z / 2
        if self.kind == "vertical":
            return [(z - 0.5, l), (z, l + 1), (z + 0.5, l), (z, l - 1)]
        if self.kind == "left":
            return [(z - 0.5, l), (z + 0.5, l), (z, l + 1), (z - 1, l + 1)]
        return [(z - 0.5, l), (z + 0.5, l), (z + 1, l + 1), (z, l + 1)]


def export_tiling(cfg: ParticleArray) -> list[TilingCell]:
    """One rhombus per site of every line whose upper neighbour is stored.

    Occupied sites give vertical rhombi.  An empty site is a left rhombus when
    the dual point above-left of it is lower than the height step demands
    (``grad2 = 1``) and a right rhombus otherwise.
    """
    cells = []
    for l, (lo, hi) in cfg.bounds.items():
        if l + 1 not in cfg.lines:
            continue
        lo_u, hi_u = cfg.bounds[l + 1]
        dz = np.arange(lo, hi + 1, 2, dtype=np.int64)
        # x + e2 sits on line l+1 at doubled position dz; it must be covered
        dz = dz[(dz >= lo_u - 1) & (dz <= hi_u + 1)]
        if len(dz) == 0:
            continue
        x1, x2 = left_of_site(l, dz)
        occupied = np.isin(dz, cfg.lines[l])
        g2 = cfg.height_at(x1, x2 + 1) - cfg.height_at(x1, x2)
        for k in range(len(dz)):
            kind = "vertical" if occupied[k] else ("left" if g2[k] == 1 else "right")
            cells.append(TilingCell(kind, SiteCoord(int(x1[k]), int(x2[k]))))
    return cells


def tiling_to_csv(cells: list[TilingCell], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("line,doubled_z,kind\n")
        for c in cells:
            fh.write(f"{c.line},{c.doubled_z},{c.kind}\n")


def tiling_to_json(cells: list[TilingCell]) -> str:
    """SVG-ready cell list.

    Schema (version 1)::

        {"schema": "interlaced-growth/tiling", "version": 1,
         "row_height": 0.866..., "cells": [
            {"kind": "vertical"|"left"|"right", "line": int,
             "doubled_z": int, "vertices": [[z, line], ...]}]}

    Vertex coordinates are (horizontal position, line index); multiply the
    line index by ``row_height`` for equilateral rhombi.
    """
    doc = {
        "schema": "interlaced-growth/tiling",
        "version": 1,
        "row_height": float(np.sqrt(3) / 2),
        "cells": [
            {
                "kind": c.kind,
                "line": c.line,
                "doubled_z": c.doubled_z,
                "vertices": [[float(a), float(b)] for a, b in c.vertices()],
            }
            for c in cells
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True)
