"""Event-driven simulation of the interlaced particle jump process.

Every site carries a rate-one Poisson clock.  When the clock at an empty site
``(l, dz)`` rings, the leftmost particle of line ``l`` to its right jumps
there, unless a particle of line ``l - 1`` or ``l + 1`` sits strictly between
the site and that particle.  The height at a dual point drops by one each
time a particle crosses it from right to left; because labels never change,
the current height is always ``x1 - p_t(x)`` on the evolving configuration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from . import _kernels as K
from .lattice import HeightField, ParticleArray, SiteCoord, WindowError

__all__ = [
    "EventStream",
    "EventWindow",
    "JumpResult",
    "LocalityVerdict",
    "RunResult",
    "SimState",
    "apply_clock",
    "build_locality_set",
    "check_spacetime_locality",
    "iter_event_chunks",
    "locality_triangle",
    "run",
    "sample_events",
    "staircase_witness",
]

log = logging.getLogger(__name__)

CHUNK_TIME = 1.0
_FAR = 1 << 60
DEFAULT_EVENT_BUDGET = 50_000_000

_OUTCOMES = {
    K.OCCUPIED: "occupied",
    K.JUMP: "jump",
    K.BLOCKED: "blocked",
    K.UNDERFLOW: "underflow",
    K.FROZEN: "frozen",
}
_MODES = {"standard": K.MODE_STANDARD, "ignore_upper": K.MODE_IGNORE_UPPER}


# ---------------------------------------------------------------------------
# Clock realisations


@dataclass(frozen=True, eq=False)
class EventWindow:
    """Sites carrying clocks: lines ``l0..l1`` with inclusive doubled ranges per line."""

    l0: int
    l1: int
    dz_lo: np.ndarray
    dz_hi: np.ndarray

    def __post_init__(self):
        n = self.l1 - self.l0 + 1
        lines = np.arange(self.l0, self.l1 + 1)
        lo = np.broadcast_to(np.asarray(self.dz_lo, dtype=np.int64), (n,)).copy()
        hi = np.broadcast_to(np.asarray(self.dz_hi, dtype=np.int64), (n,)).copy()
        lo += (lo - lines) % 2
        hi -= (hi - lines) % 2
        object.__setattr__(self, "dz_lo", lo)
        object.__setattr__(self, "dz_hi", hi)

    @classmethod
    def rectangle(cls, lines: tuple[int, int], dz: tuple[int, int]) -> "EventWindow":
        return cls(int(lines[0]), int(lines[1]), dz[0], dz[1])

    @classmethod
    def from_box(cls, a: tuple[int, int], b: tuple[int, int]) -> "EventWindow":
        """Clocks that can change heights on the dual box ``[a1, b1] x [a2, b2]``.

        The height at ``x`` only moves when the site between ``x - (1, 1)`` and
        ``x`` rings, so the support is the set of those sites.
        """
        (a1, a2), (b1, b2) = a, b
        l0, l1 = a2 - b1, b2 - a1
        lines = np.arange(l0, l1 + 1)
        y_lo = np.maximum(a1 - 1, a2 - 1 - lines)
        y_hi = np.minimum(b1 - 1, b2 - 1 - lines)
        return cls(int(l0), int(l1), 2 * y_lo + lines, 2 * y_hi + lines)

    @property
    def n_lines(self) -> int:
        return self.l1 - self.l0 + 1

    @property
    def sites_per_line(self) -> np.ndarray:
        return np.maximum((self.dz_hi - self.dz_lo) // 2 + 1, 0)

    @property
    def n_sites(self) -> int:
        return int(self.sites_per_line.sum())

    def sites(self) -> tuple[np.ndarray, np.ndarray]:
        """All sites in (line, doubled position) lexicographic order."""
        counts = self.sites_per_line
        lines = np.repeat(np.arange(self.l0, self.l1 + 1, dtype=np.int64), counts)
        starts = np.repeat(self.dz_lo, counts)
        first = np.repeat(np.cumsum(counts) - counts, counts)
        dz = starts + 2 * (np.arange(counts.sum(), dtype=np.int64) - first)
        return lines, dz

    def contains(self, line, dz) -> np.ndarray:
        line = np.asarray(line)
        dz = np.asarray(dz)
        inside = (line >= self.l0) & (line <= self.l1)
        idx = np.clip(line - self.l0, 0, self.n_lines - 1)
        return inside & (dz >= self.dz_lo[idx]) & (dz <= self.dz_hi[idx]) & ((dz - line) % 2 == 0)

    def storage_bounds(self, right_margin: int) -> dict:
        """Rectangular particle storage with frozen ghost lines on both sides."""
        lo = int(self.dz_lo.min())
        hi = int(self.dz_hi.max()) + int(right_margin)
        return {
            l: (lo + (lo - l) % 2, hi - (hi - l) % 2) for l in range(self.l0 - 1, self.l1 + 2)
        }

    def to_dict(self) -> dict:
        return {
            "l0": self.l0,
            "l1": self.l1,
            "dz_lo": self.dz_lo.tolist(),
            "dz_hi": self.dz_hi.tolist(),
        }


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-sorted clock rings ``(line, doubled_z, time)``."""

    seed: int
    window: EventWindow | None
    T: float
    line: np.ndarray
    dz: np.ndarray
    time: np.ndarray

    def __len__(self) -> int:
        return len(self.time)

    def __iter__(self):
        return zip(self.line.tolist(), self.dz.tolist(), self.time.tolist())

    @classmethod
    def from_arrays(cls, line, dz, time, seed: int = 0, window=None, T=None) -> "EventStream":
        line = np.asarray(line, dtype=np.int64)
        dz = np.asarray(dz, dtype=np.int64)
        time = np.asarray(time, dtype=np.float64)
        order = np.lexsort((dz, line, time))
        T = float(time.max()) if T is None and len(time) else float(T or 0.0)
        return cls(seed, window, T, line[order], dz[order], time[order])

    def select(self, mask) -> "EventStream":
        mask = np.asarray(mask, dtype=bool)
        return EventStream(self.seed, self.window, self.T, self.line[mask], self.dz[mask], self.time[mask])

    def restrict(self, window: EventWindow) -> "EventStream":
        """Drop every ring outside ``window``."""
        return self.select(window.contains(self.line, self.dz))

    def slice(self, a: int, b: int) -> "EventStream":
        return EventStream(self.seed, self.window, self.T, self.line[a:b], self.dz[a:b], self.time[a:b])

    def until(self, t: float) -> "EventStream":
        return self.select(self.time <= t)

    def on_line(self, line: int) -> tuple[np.ndarray, np.ndarray]:
        m = self.line == line
        return self.dz[m], self.time[m]


def _chunk(sites, T: float, seed: int, k: int):
    # Superposition of the per-site clocks: a rate-n stream in time with
    # uniformly chosen sites, generated directly in time order.
    lines, dz = sites
    n = len(lines)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(k,))
    rng = np.random.Generator(np.random.PCG64(ss))
    t0 = k * CHUNK_TIME
    t_end = min(t0 + CHUNK_TIME, T)
    block = int(n * CHUNK_TIME + 6 * np.sqrt(n * CHUNK_TIME) + 16)
    gaps = []
    total = 0.0
    while total < CHUNK_TIME:
        g = rng.standard_exponential(block) / n
        gaps.append(g)
        total += float(g.sum())
    times = t0 + np.cumsum(np.concatenate(gaps))
    times = times[times < t0 + CHUNK_TIME]
    idx = rng.integers(0, n, size=len(times))
    keep = times <= t_end
    idx, times = idx[keep], times[keep]
    return lines[idx], dz[idx], times


def iter_event_chunks(window: EventWindow, T: float, seed: int) -> Iterator[EventStream]:
    """Stream the clock realisation in unit time slabs.

    Slab ``k`` uses its own generator derived from ``(seed, k)``, so the
    realisation up to time ``T`` is a prefix of the one for any larger ``T``.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    sites = window.sites()
    n_chunks = int(np.ceil(T / CHUNK_TIME))
    for k in range(n_chunks):
        line, dz, time = _chunk(sites, T, seed, k)
        yield EventStream(int(seed), window, float(T), line, dz, time)


def sample_events(window: EventWindow, T: float, seed: int, budget: int = DEFAULT_EVENT_BUDGET) -> EventStream:
    """Whole clock realisation on ``window x [0, T]`` in one stream."""
    if T < 0:
        raise ValueError("T must be non-negative")
    if window.n_sites == 0:
        raise ValueError("empty event window")
    expected = window.n_sites * T
    if expected > budget:
        raise MemoryError(
            f"expected {expected:.3g} events exceeds the budget of {budget}; "
            "use iter_event_chunks"
        )
    parts = list(iter_event_chunks(window, T, seed))
    if not parts:
        empty = np.zeros(0, dtype=np.int64)
        return EventStream(int(seed), window, float(T), empty, empty.copy(), np.zeros(0))
    return EventStream(
        int(seed),
        window,
        float(T),
        np.concatenate([p.line for p in parts]),
        np.concatenate([p.dz for p in parts]),
        np.concatenate([p.time for p in parts]),
    )


# ---------------------------------------------------------------------------
# Simulation state


class JumpResult(NamedTuple):
    outcome: str
    old_dz: int | None
    new_dz: int | None

    @property
    def moved(self) -> bool:
        return self.outcome == "jump"


class SimState:
    """Mutable state of one replica: configuration, clock and jump records."""

    def __init__(
        self,
        initial: ParticleArray,
        monitored: Iterable = (),
        mode: str = "standard",
        validate: bool = True,
        record_capacity: int = 1 << 16,
    ):
        if validate:
            errs = initial.check()
            if errs:
                raise ValueError("initial configuration is invalid: " + "; ".join(errs[:3]))
        if mode not in _MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self._mode = _MODES[mode]
        l0, l1 = initial.line_range
        self.l0 = l0
        nl = l1 - l0 + 1
        width = max(((b - a) // 2 + 1 for a, b in initial.bounds.values()), default=0)
        self.occ = np.zeros((nl, max(width, 1)), dtype=np.uint8)
        self.nsite = np.zeros(nl, dtype=np.int64)
        # missing lines get an empty range that no query can fall into
        self.lo = np.full(nl, _FAR, dtype=np.int64)
        self.hi = np.full(nl, -_FAR, dtype=np.int64)
        self.present = np.zeros(nl, dtype=np.bool_)
        self.label_offset = np.zeros(nl, dtype=np.int64)
        self.active = np.zeros(nl, dtype=np.bool_)
        for l, p in initial.lines.items():
            i = l - l0
            self.lo[i], self.hi[i] = initial.bounds[l]
            self.nsite[i] = (self.hi[i] - self.lo[i]) // 2 + 1
            self.occ[i, (p - self.lo[i]) // 2] = 1
            self.label_offset[i] = initial.label_offset[l]
            self.active[i] = l not in initial.frozen
            self.present[i] = True
        self._frozen = initial.frozen
        self.box = initial.box

        self.initial_heights: dict[SiteCoord, int] = {}
        self._setup_monitors(list(monitored))
        self._rec_mon = np.zeros(record_capacity, dtype=np.int64)
        self._rec_time = np.zeros(record_capacity, dtype=np.float64)
        self._rec_n = np.zeros(1, dtype=np.int64)
        self.counters = np.zeros(K.N_COUNTERS, dtype=np.int64)
        self._last = np.zeros(2, dtype=np.int64)
        self.clock = 0.0
        self.event_cursor = 0

    def _setup_monitors(self, monitored):
        self.monitored = [SiteCoord(*map(int, x)) for x in dict.fromkeys(tuple(x) for x in monitored)]
        nl = self.occ.shape[0]
        per_line: list[list[tuple[int, int]]] = [[] for _ in range(nl)]
        if self.monitored:
            m = np.array(self.monitored, dtype=np.int64)
            h0 = self.heights(m[:, 0], m[:, 1])
            for k, x in enumerate(self.monitored):
                self.initial_heights[x] = int(h0[k])
                per_line[x.line - self.l0].append((x.doubled_z, k))
        width = max((len(r) for r in per_line), default=0)
        self._mon_dz = np.zeros((nl, max(width, 1)), dtype=np.int64)
        self._mon_id = np.zeros((nl, max(width, 1)), dtype=np.int64)
        self._mon_cnt = np.zeros(nl, dtype=np.int64)
        for i, r in enumerate(per_line):
            r.sort()
            self._mon_cnt[i] = len(r)
            for j, (d, k) in enumerate(r):
                self._mon_dz[i, j] = d
                self._mon_id[i, j] = k

    # -- event processing ----------------------------------------------------

    def _process(self, line_idx, dz, time, start, stop) -> int:
        while True:
            done = K.process_events(
                self.occ, self.lo, self.hi, self.nsite, self.active,
                line_idx, dz, time, start, stop,
                self._mon_dz, self._mon_cnt, self._mon_id,
                self._rec_mon, self._rec_time, self._rec_n,
                self.counters, self._mode, self._last,
            )
            if done == stop:
                return done
            cap = len(self._rec_mon)
            self._rec_mon = np.concatenate([self._rec_mon, np.zeros(cap, dtype=np.int64)])
            self._rec_time = np.concatenate([self._rec_time, np.zeros(cap)])
            start = done

    def apply_clock(self, line: int, dz: int, time: float | None = None) -> JumpResult:
        """Ring the clock at ``(line, dz)`` once."""
        t = self.clock if time is None else float(time)
        if t < self.clock:
            raise ValueError("events must be applied in time order")
        self._process(
            np.array([line - self.l0], dtype=np.int64),
            np.array([dz], dtype=np.int64),
            np.array([t]),
            0,
            1,
        )
        self.clock = t
        self.event_cursor += 1
        outcome = _OUTCOMES[int(self._last[0])]
        if outcome == "underflow":
            log.warning("boundary underflow at line %d, doubled z %d", line, dz)
        if outcome == "jump":
            return JumpResult(outcome, int(self._last[1]), int(dz))
        return JumpResult(outcome, None, None)

    def advance(self, events: EventStream, until: float | None = None) -> int:
        """Process the rings of ``events`` up to time ``until`` (inclusive); returns the count."""
        time = events.time
        stop = len(time) if until is None else int(np.searchsorted(time, until, side="right"))
        if stop == 0:
            if until is not None:
                self.clock = max(self.clock, float(until))
            return 0
        if time[0] < self.clock:
            raise ValueError("events precede the current clock")
        line_idx = events.line - self.l0
        before = self.counters[K.C_UNDERFLOW]
        self._process(line_idx, events.dz, time, 0, stop)
        if self.counters[K.C_UNDERFLOW] > before:
            log.warning("%d boundary underflows", int(self.counters[K.C_UNDERFLOW] - before))
        self.clock = float(time[stop - 1]) if until is None else max(float(until), float(time[stop - 1]))
        self.event_cursor += stop
        return stop

    # -- observables ---------------------------------------------------------

    @property
    def underflows(self) -> int:
        return int(self.counters[K.C_UNDERFLOW])

    @property
    def jumps(self) -> int:
        return int(self.counters[K.C_JUMPS])

    def heights(self, x1, x2) -> np.ndarray:
        x1 = np.ascontiguousarray(np.atleast_1d(x1), dtype=np.int64)
        x2 = np.ascontiguousarray(np.atleast_1d(x2), dtype=np.int64)
        out = np.empty(len(x1), dtype=np.int64)
        bad = K.heights_at(self.occ, self.lo, self.hi, self.label_offset, x1, x2, self.l0, out)
        if bad >= 0:
            raise WindowError(f"dual point {(int(x1[bad]), int(x2[bad]))} outside the window")
        return out

    def height_field(self, box=None) -> HeightField:
        box = box if box is not None else self.box
        if box is None:
            raise WindowError("no snapshot box")
        (a1, a2), (b1, b2) = box
        x1, x2 = np.meshgrid(np.arange(a1, b1 + 1), np.arange(a2, b2 + 1), indexing="ij")
        vals = self.heights(x1.ravel(), x2.ravel()).reshape(x1.shape)
        return HeightField(SiteCoord(a1, a2), vals)

    @property
    def cfg(self) -> ParticleArray:
        l0 = self.l0
        lines, bounds, offs = {}, {}, {}
        for i in range(self.occ.shape[0]):
            if not self.present[i]:
                continue
            l = l0 + i
            lines[l] = self.lo[i] + 2 * np.flatnonzero(self.occ[i, : self.nsite[i]])
            bounds[l] = (int(self.lo[i]), int(self.hi[i]))
            offs[l] = int(self.label_offset[i])
        return ParticleArray(lines, bounds, offs, self._frozen, self.box)

    def jump_times(self) -> dict[SiteCoord, np.ndarray]:
        n = int(self._rec_n[0])
        ids, times = self._rec_mon[:n], self._rec_time[:n]
        out = {}
        for k, x in enumerate(self.monitored):
            out[x] = times[ids == k].copy()
        return out

    @property
    def jump_counters(self) -> dict[SiteCoord, int]:
        n = int(self._rec_n[0])
        c = np.bincount(self._rec_mon[:n], minlength=len(self.monitored))
        return {x: int(c[k]) for k, x in enumerate(self.monitored)}


def apply_clock(state: SimState, line: int, doubled_z: int, time: float | None = None) -> JumpResult:
    return state.apply_clock(line, doubled_z, time)


@dataclass
class RunResult:
    snapshots: list
    trajectories: dict
    times: list
    underflows: int = 0
    jumps: int = 0
    final: SimState | None = field(default=None, repr=False)

    def height(self, x, t: float) -> int:
        """``h(x) - J_x(t)`` for a monitored point."""
        x = SiteCoord(*x)
        return self.final.initial_heights[x] - int(np.searchsorted(self.trajectories[x], t, side="right"))


def run(
    initial: ParticleArray,
    events,
    snapshot_times: Iterable[float] = (),
    monitored: Iterable = (),
    snapshot_box=None,
    snapshot_points=None,
    mode: str = "standard",
    validate: bool = True,
) -> RunResult:
    """Evolve ``initial`` under ``events`` (a stream or an iterable of time-ordered chunks).

    At each snapshot time every ring up to and including that time has been
    applied.  Snapshots are :class:`HeightField` objects on ``snapshot_box``
    (default: the configuration's box), or raw height arrays when
    ``snapshot_points = (x1, x2)`` is given.
    """
    times = [float(t) for t in snapshot_times]
    if times != sorted(times):
        raise ValueError("snapshot times must be sorted")
    state = SimState(initial, monitored, mode=mode, validate=validate)
    chunks = [events] if isinstance(events, EventStream) else events
    snaps = []

    def take():
        if snapshot_points is not None:
            snaps.append(state.heights(*snapshot_points))
        else:
            snaps.append(state.height_field(snapshot_box))

    pending = list(times)
    for chunk in chunks:
        if len(chunk) == 0:
            continue
        cursor = 0
        while pending and pending[0] < chunk.time[-1]:
            t = pending.pop(0)
            idx = int(np.searchsorted(chunk.time, t, side="right"))
            state.advance(chunk.slice(cursor, idx), until=t)
            cursor = max(cursor, idx)
            take()
        state.advance(chunk.slice(cursor, len(chunk)))
    while pending:
        state.clock = max(state.clock, pending.pop(0))
        take()
    return RunResult(snaps, state.jump_times(), times, state.underflows, state.jumps, state)


# ---------------------------------------------------------------------------
# Space-time locality


def locality_triangle(ell: int) -> list[tuple[int, int]]:
    """Offsets ``y`` with ``-2 ell < y1, y2 <= 0`` and ``-2 ell <= y1 + y2``."""
    return [
        (y1, y2)
        for y1 in range(-2 * ell + 1, 1)
        for y2 in range(-2 * ell + 1, 1)
        if y1 + y2 >= -2 * ell
    ]


def build_locality_set(x, t: float, ell: int) -> dict[SiteCoord, tuple[float, float]]:
    """Dual points and closed time intervals on which ordering is required."""
    if ell < 1:
        raise ValueError("ell must be at least 1")
    if t < ell:
        raise ValueError(f"need t >= ell, got t={t}, ell={ell}")
    x = SiteCoord(*map(int, x))
    base = t - ell
    out = {x: (base, base)}
    for y1, y2 in locality_triangle(ell):
        if (y1, y2) == (0, 0):
            continue
        f = (y1 + y2) // 2
        out[SiteCoord(x.x1 + y1, x.x2 + y2)] = (base - f - 1, base - f)
    return out


class LocalityVerdict(NamedTuple):
    premise: bool
    conclusion: bool
    underflows: int = 0

    @property
    def consistent(self) -> bool:
        return self.conclusion or not self.premise


def _path(h0: int, jumps: np.ndarray, s: np.ndarray) -> np.ndarray:
    return h0 - np.searchsorted(jumps, s, side="right")


def _ordered_on(a0, ja, b0, jb, lo, hi) -> bool:
    checkpoints = np.concatenate(
        [[lo, hi], ja[(ja >= lo) & (ja <= hi)], jb[(jb >= lo) & (jb <= hi)]]
    )
    return bool(np.all(_path(a0, ja, checkpoints) <= _path(b0, jb, checkpoints)))


def check_spacetime_locality(h, h_prime, events: EventStream, x, t: float, ell: int) -> LocalityVerdict:
    """Run both initial conditions under ``events`` and test the locality implication.

    ``premise``: the first height is below the second on every point of the
    locality set over its whole interval.  ``conclusion``: the same ordering
    holds at ``x`` throughout ``[t - ell, t]``.  Height paths are piecewise
    constant, so comparing at interval ends and jump times is exact.
    """
    from .lattice import particles_from_height

    cfg = h if isinstance(h, ParticleArray) else particles_from_height(h)
    cfg2 = h_prime if isinstance(h_prime, ParticleArray) else particles_from_height(h_prime)
    E = build_locality_set(x, t, ell)
    pts = list(E)
    evs = events.until(t)
    ra = run(cfg, evs, monitored=pts)
    rb = run(cfg2, evs, monitored=pts)
    ia, ib = ra.final.initial_heights, rb.final.initial_heights
    premise = all(
        _ordered_on(ia[y], ra.trajectories[y], ib[y], rb.trajectories[y], lo, hi)
        for y, (lo, hi) in E.items()
    )
    x = SiteCoord(*map(int, x))
    conclusion = _ordered_on(ia[x], ra.trajectories[x], ib[x], rb.trajectories[x], t - ell, t)
    return LocalityVerdict(premise, conclusion, ra.underflows + rb.underflows)


# ---------------------------------------------------------------------------
# Increasing subsequences of rings


def staircase_witness(events_on_line, x, s: float, tau: float, k: int):
    """Rings ``(dz_i, t_i)``, ``i < k``, left of ``x`` with both coordinates strictly increasing.

    ``events_on_line`` is a pair ``(doubled_z, time)`` of arrays for the line
    of ``x`` (or an :class:`EventStream`, filtered here).  Returns the list
    of rings or ``None``.
    """
    if k < 1:
        raise ValueError("k must be positive")
    if tau < 0:
        raise ValueError("tau must be non-negative")
    x = SiteCoord(*map(int, x))
    if isinstance(events_on_line, EventStream):
        dz, tm = events_on_line.on_line(x.line)
    else:
        dz, tm = (np.asarray(a) for a in events_on_line)
    m = (dz < x.doubled_z) & (tm >= s) & (tm <= s + tau)
    dz, tm = dz[m], tm[m]
    if len(dz) < k:
        return None
    # time ascending, position descending on ties, so equal times never chain
    order = np.lexsort((-dz, tm))
    zs = dz[order]
    tails: list[int] = []  # index into zs of the smallest tail of each length
    tail_vals: list[int] = []
    parent = np.full(len(zs), -1)
    for i, z in enumerate(zs):
        j = int(np.searchsorted(tail_vals, z, side="left"))
        if j > 0:
            parent[i] = tails[j - 1]
        if j == len(tails):
            tails.append(i)
            tail_vals.append(int(z))
        else:
            tails[j] = i
            tail_vals[j] = int(z)
        if len(tails) >= k:
            break
    if len(tails) < k:
        return None
    chain = []
    i = tails[k - 1]
    while i >= 0:
        chain.append(i)
        i = parent[i]
    chain.reverse()
    tsorted = tm[order]
    return [(int(zs[i]), float(tsorted[i])) for i in chain[-k:]]
