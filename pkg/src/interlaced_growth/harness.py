"""Experiments: discretised profiles, growth-speed measurement, hydrodynamic
convergence against the PDE solver, and the randomised property battery."""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynamics import (
    EventStream,
    EventWindow,
    SimState,
    build_locality_set,
    check_spacetime_locality,
    iter_event_chunks,
    run,
    sample_events,
    staircase_witness,
)
from .hamiltonian import SlopeVector, speed
from .hjsolver import GridSolution, MacroProfile, solve
from .lattice import HeightField, ParticleArray, SiteCoord, check_admissible

__all__ = [
    "BatteryReport",
    "CheckResult",
    "ConfigError",
    "ConvergenceReport",
    "ExperimentConfig",
    "SpeedResult",
    "calibrate_alpha",
    "discretize_profile",
    "discretized_height",
    "hydro_convergence",
    "measure_speed",
    "property_battery",
    "random_admissible",
    "simulation_window",
]

SCHEMA = "interlaced-growth/experiment"
SCHEMA_VERSION = 1
DEFAULT_ALPHA = 5.0
# guards floor() against round-off when L f(x/L) is an exact integer
FLOOR_EPS = 1e-9

Progress = Callable[[str], None] | None


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Profiles and windows


NAMED_PROFILES = {
    # max of two affine maps with slopes in T_4: kink line through the domain
    "shock-max": {"kind": "piecewise", "op": "max", "pieces": [[0.1, 0.5, 0.0], [0.5, 0.2, 0.1]]},
    "valley-min": {"kind": "piecewise", "op": "min", "pieces": [[0.1, 0.5, 0.0], [0.5, 0.2, -0.1]]},
}


def profile_from_spec(spec: dict, M: int) -> MacroProfile:
    kind = spec.get("kind")
    if kind == "linear":
        rho = spec.get("rho")
        if not (isinstance(rho, (list, tuple)) and len(rho) == 2):
            raise ConfigError("linear profile needs rho = [rho1, rho2]")
        return MacroProfile.linear(rho, M, float(spec.get("c", 0.0)))
    if kind == "piecewise":
        pieces = spec.get("pieces")
        if not pieces or any(len(p) != 3 for p in pieces):
            raise ConfigError("piecewise profile needs pieces = [[rho1, rho2, c], ...]")
        return MacroProfile.piecewise(pieces, M, spec.get("op", "max"))
    if kind == "expression":
        name = spec.get("id")
        if name not in NAMED_PROFILES:
            raise ConfigError(f"unknown profile id {name!r}; known: {sorted(NAMED_PROFILES)}")
        return profile_from_spec(NAMED_PROFILES[name], M)
    raise ConfigError(f"unknown profile kind {kind!r}")


def discretized_height(f: MacroProfile, L: int) -> Callable:
    """``x -> floor(L f(x / L))`` as a vectorised integer function."""

    def h(x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        return np.floor(L * f(x1 / L, x2 / L) + FLOOR_EPS).astype(np.int64)

    return h


def discretize_profile(f: MacroProfile, L: int, window) -> HeightField:
    """Integer heights ``floor(L f(x / L))`` on the dual box ``window = ((a1, a2), (b1, b2))``."""
    (a1, a2), (b1, b2) = window
    X1, X2 = np.meshgrid(np.arange(a1, b1 + 1), np.arange(a2, b2 + 1), indexing="ij")
    hf = HeightField(SiteCoord(a1, a2), discretized_height(f, L)(X1, X2))
    rep = check_admissible(hf, f.M)
    if not rep:
        raise ValueError(f"discretisation is not admissible ({rep.detail}); profile outside the slope class")
    return hf


@dataclass(frozen=True)
class SimWindow:
    """Event support plus the particle storage that makes the truncation exact."""

    events: EventWindow
    bounds: dict
    measure: tuple
    depth: int

    @property
    def frozen(self) -> set:
        return {self.events.l0 - 1, self.events.l1 + 1}

    def dual_box(self):
        """Smallest dual box containing every point the storage reads."""
        ls = list(self.bounds)
        l0, l1 = ls[0], ls[-1]
        lo = min(b[0] for b in self.bounds.values())
        hi = max(b[1] for b in self.bounds.values())
        return ((lo - l1) // 2 - 1, (lo + l0) // 2 - 1), ((hi - l0) // 2 + 2, (hi + l1) // 2 + 2)

    def particles(self, height: Callable) -> ParticleArray:
        return ParticleArray.from_height_function(height, self.bounds, self.frozen, box=self.measure)


def simulation_window(measure, depth: int, T_micro: float, M: int, ne_margin: int = 0) -> SimWindow:
    """Window for measuring heights on the dual box ``measure``.

    Heights at ``x`` only depend on clocks and data south-west of ``x``, so
    the clock support is ``measure`` extended by ``depth`` towards lower
    ``x1`` and ``x2``.  Particles are stored on a rectangle one line wider on
    each side (frozen ghost lines) and with enough sites to the right that
    the supply of particles entering from the right is never exhausted.
    """
    (a1, a2), (b1, b2) = measure
    ew = EventWindow.from_box((a1 - depth, a2 - depth), (b1 + ne_margin, b2 + ne_margin))
    margin = 2 * M * (int(math.ceil(T_micro)) + 8)
    return SimWindow(ew, ew.storage_bounds(margin), ((a1, a2), (b1, b2)), int(depth))


def _simulate_points(
    height: Callable,
    win: SimWindow,
    T_micro: float,
    seed: int,
    points,
    times_micro: Sequence[float],
    mode: str = "standard",
    validate: bool = False,
):
    cfg = win.particles(height)
    res = run(
        cfg,
        iter_event_chunks(win.events, T_micro, seed),
        times_micro,
        snapshot_points=points,
        mode=mode,
        validate=validate,
    )
    return np.array(res.snapshots), res.underflows, res.jumps


# ---------------------------------------------------------------------------
# Growth speed


@dataclass
class SpeedResult:
    rho: tuple
    L: int
    T: float
    mean: float
    stderr: float
    rates: list
    underflows: int
    theory: float

    def to_dict(self) -> dict:
        return asdict(self)


def _map_seeds(fn, seeds, threads: int):
    if threads <= 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, seeds))


def measure_speed(
    rho,
    L: int,
    T: float,
    seeds: Sequence[int],
    M: int = 4,
    alpha: float = DEFAULT_ALPHA,
    cushion: int | None = None,
    threads: int = 1,
    progress: Progress = None,
) -> SpeedResult:
    """Mean of ``(h(0) - H(0, L T)) / (L T)`` over seeds, from ``floor(rho . x)``."""
    rho = SlopeVector(float(rho[0]), float(rho[1]))
    if not rho.in_T_M(M):
        raise ValueError(f"slope {tuple(rho)} is not in T_{M}")
    T_micro = L * T
    need = int(math.ceil(alpha * T_micro))
    depth = need if cushion is None else int(cushion)
    if depth < need:
        raise ValueError(f"cushion {depth} is smaller than alpha*T*L = {need}")
    f = MacroProfile.linear(rho, M)
    h = discretized_height(f, L)
    win = simulation_window(((0, 0), (0, 0)), depth, T_micro, M)
    pts = (np.array([0]), np.array([0]))
    h0 = int(h(0, 0))

    def one(seed):
        snaps, under, _ = _simulate_points(h, win, T_micro, seed, pts, [T_micro])
        if progress:
            progress(f"speed rho={tuple(rho)} L={L} seed={seed} done")
        return (h0 - int(snaps[0][0])) / T_micro, under

    out = _map_seeds(one, list(seeds), threads)
    rates = [r for r, _ in out]
    se = float(np.std(rates, ddof=1) / math.sqrt(len(rates))) if len(rates) > 1 else float("nan")
    return SpeedResult(
        (rho.rho1, rho.rho2), L, T, float(np.mean(rates)), se, rates, sum(u for _, u in out), speed(rho)
    )


# ---------------------------------------------------------------------------
# Experiment configuration


@dataclass
class ExperimentConfig:
    """Versioned experiment description (JSON on disk).

    Keys: ``profile`` (``{"kind": "linear", "rho": [r1, r2]}``,
    ``{"kind": "piecewise", "op": "max"|"min", "pieces": [[r1, r2, c], ...]}``
    or ``{"kind": "expression", "id": name}``), ``M``, ``L`` (strictly
    increasing list), ``T``, ``R``, ``seeds``, ``alpha``, ``dx`` (PDE grid),
    ``sample_spacing`` (comparison grid, must make ``L * spacing`` integral),
    ``times`` (rescaled comparison times), ``threshold`` (final sup-error
    bound), ``output`` (directory).
    """

    profile: dict
    M: int = 4
    L: list = field(default_factory=lambda: [64, 128, 256])
    T: float = 1.0
    R: float = 1.0
    seeds: list = field(default_factory=lambda: [1, 2, 3, 4])
    alpha: float = DEFAULT_ALPHA
    dx: float = 1 / 128
    sample_spacing: float = 1 / 32
    times: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    threshold: float = 0.05
    output: str = "out"

    KEYS = (
        "profile", "M", "L", "T", "R", "seeds", "alpha", "dx",
        "sample_spacing", "times", "threshold", "output",
    )

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.M, int) or self.M < 2:
            raise ConfigError("M must be an integer >= 2")
        if not self.L or any(not isinstance(l, int) or l < 1 for l in self.L):
            raise ConfigError("L must be a non-empty list of positive integers")
        if any(b <= a for a, b in zip(self.L, self.L[1:])):
            raise ConfigError("L must be strictly increasing")
        if self.T < 0 or self.R < 0:
            raise ConfigError("T and R must be non-negative")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.alpha <= 0 or self.dx <= 0 or self.sample_spacing <= 0:
            raise ConfigError("alpha, dx and sample_spacing must be positive")
        for l in self.L:
            if abs(l * self.sample_spacing - round(l * self.sample_spacing)) > 1e-9:
                raise ConfigError(f"L={l} times sample_spacing is not an integer")
        ratio = self.sample_spacing / self.dx
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("sample_spacing must be a multiple of dx")
        if any(t < 0 or t > self.T + 1e-12 for t in self.times):
            raise ConfigError("times must lie in [0, T]")
        f = self.macro_profile()
        ok, msg = f.check_membership(((-self.R - 1, self.R + 1), (-self.R - 1, self.R + 1)))
        if not ok:
            raise ConfigError(f"profile fails the slope-class check: {msg}")

    def macro_profile(self) -> MacroProfile:
        return profile_from_spec(self.profile, self.M)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if d.get("schema", SCHEMA) != SCHEMA:
            raise ConfigError(f"unexpected schema {d.get('schema')!r}")
        if int(d.get("version", SCHEMA_VERSION)) != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config version {d.get('version')}")
        unknown = set(d) - set(cls.KEYS) - {"schema", "version"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "profile" not in d:
            raise ConfigError("config needs a profile")
        kw = {k: d[k] for k in cls.KEYS if k in d}
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        d = {"schema": SCHEMA, "version": SCHEMA_VERSION}
        d.update({k: getattr(self, k) for k in self.KEYS})
        return d


# ---------------------------------------------------------------------------
# Hydrodynamic convergence


@dataclass
class ConvergenceReport:
    profile: str
    L: list
    errors: list
    seed_errors: list
    spread: list
    underflows: list
    decreasing: bool
    threshold: float
    passed: bool
    sample_spacing: float
    dx: float
    runtimes: list = field(default_factory=list)
    rows: list = field(default_factory=list, repr=False)

    def to_dict(self, include_runtimes: bool = False) -> dict:
        d = {
            "profile": self.profile,
            "L": self.L,
            "sup_error": self.errors,
            "per_seed_sup_error": self.seed_errors,
            "spread": self.spread,
            "underflows": self.underflows,
            "decreasing": self.decreasing,
            "threshold": self.threshold,
            "passed": self.passed,
            "sample_spacing": self.sample_spacing,
            "dx": self.dx,
        }
        if include_runtimes:
            d["runtime_s"] = self.runtimes
        return d


def comparison_points(R: float, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Grid points of the given spacing inside the closed Euclidean ball of radius ``R``."""
    n = int(math.floor(R / spacing + 1e-9))
    k = np.arange(-n, n + 1)
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    m = (K1**2 + K2**2) * spacing**2 <= R**2 + 1e-12
    return K1[m] * spacing, K2[m] * spacing


def hydro_convergence(
    cfg: ExperimentConfig,
    reference: GridSolution | None = None,
    threads: int = 1,
    progress: Progress = None,
) -> ConvergenceReport:
    """Sup-distance between rescaled simulated heights and the PDE solution, per ``L``.

    Heights are averaged over seeds before the sup is taken; per-seed sup
    errors are reported as well.
    """
    f = cfg.macro_profile()
    if reference is None:
        if progress:
            progress("solving the PDE reference")
        reference = solve(f, cfg.T, ((-cfg.R, cfg.R), (-cfg.R, cfg.R)), cfg.dx, cfg.times)
    X1, X2 = comparison_points(cfg.R, cfg.sample_spacing)
    U = np.stack([reference.at(X1, X2, t) for t in cfg.times])  # (nt, npts)

    errors, seed_errs, spreads, unders, runtimes, rows = [], [], [], [], [], []
    for L in cfg.L:
        t0 = time.perf_counter()
        T_micro = L * cfg.T
        r = int(math.ceil(L * cfg.R))
        depth = int(math.ceil(cfg.alpha * T_micro))
        win = simulation_window(((-r, -r), (r, r)), depth, T_micro, cfg.M)
        h = discretized_height(f, L)
        pts = (np.rint(L * X1).astype(np.int64), np.rint(L * X2).astype(np.int64))
        times_micro = [L * t for t in cfg.times]

        def one(seed, L=L, h=h, win=win, pts=pts, times_micro=times_micro, T_micro=T_micro):
            snaps, under, _ = _simulate_points(h, win, T_micro, seed, pts, times_micro)
            if progress:
                progress(f"hydro L={L} seed={seed} done")
            return snaps / L, under

        out = _map_seeds(one, list(cfg.seeds), threads)
        H = np.stack([o[0] for o in out])  # (nseed, nt, npts)
        per_seed = [float(np.abs(Hs - U).max()) for Hs in H]
        mean = H.mean(axis=0)
        err = float(np.abs(mean - U).max())
        errors.append(err)
        seed_errs.append(per_seed)
        spreads.append(float(np.max(H.max(axis=0) - H.min(axis=0))))
        unders.append(int(sum(o[1] for o in out)))
        runtimes.append(time.perf_counter() - t0)
        for n, t in enumerate(cfg.times):
            rows.append((L, float(t), float(np.abs(mean[n] - U[n]).max())))
        if progress:
            progress(f"hydro L={L}: sup error {err:.4f}")
    decreasing = all(b < a for a, b in zip(errors, errors[1:]))
    passed = decreasing and errors[-1] <= cfg.threshold and sum(unders) == 0
    return ConvergenceReport(
        f.name, list(cfg.L), errors, seed_errs, spreads, unders, decreasing,
        cfg.threshold, passed, cfg.sample_spacing, cfg.dx, runtimes, rows,
    )


# ---------------------------------------------------------------------------
# Random admissible configurations


def random_slope(rng: np.random.Generator, M: int) -> tuple[float, float]:
    cap = 1.0 - 1.0 / M
    while True:
        a, b = rng.uniform(0, cap, 2)
        if a + b <= cap:
            return float(a), float(b)


def random_profile(rng: np.random.Generator, M: int, n_pieces: int | None = None) -> MacroProfile:
    """Max or min of a few affine maps with slopes in ``T_M``."""
    k = int(rng.integers(1, 4)) if n_pieces is None else n_pieces
    pieces = [(*random_slope(rng, M), float(rng.uniform(-0.5, 0.5))) for _ in range(k)]
    return MacroProfile.piecewise(pieces, M, "max" if rng.random() < 0.5 else "min")


def _flip_ok(v: np.ndarray, i: int, j: int, M: int) -> bool:
    n1, n2 = v.shape
    c = v[i, j]
    for di, dj in ((1, 0), (0, 1), (1, 1)):
        if 0 <= i + di < n1 and 0 <= j + dj < n2 and not 0 <= v[i + di, j + dj] - c <= 1:
            return False
        if 0 <= i - di < n1 and 0 <= j - dj < n2 and not 0 <= c - v[i - di, j - dj] <= 1:
            return False
    # longest run of unit diagonal steps through (i, j)
    run_len = 0
    a, b = i, j
    while a + 1 < n1 and b + 1 < n2 and v[a + 1, b + 1] - v[a, b] == 1:
        run_len += 1
        a, b = a + 1, b + 1
    a, b = i, j
    while a - 1 >= 0 and b - 1 >= 0 and v[a, b] - v[a - 1, b - 1] == 1:
        run_len += 1
        a, b = a - 1, b - 1
    return run_len < M


def random_admissible(
    box, M: int, rng: np.random.Generator, flips: int = 200, scale: float | None = None
) -> HeightField:
    """Random height field in the class ``M`` on the dual box ``box``.

    Starts from a discretised max/min of random affine maps (or the max/min
    of two such) and then applies random single-point moves ``h(x) +- 1``
    that keep every constraint.
    """
    (a1, a2), (b1, b2) = box
    L = scale if scale is not None else float(rng.uniform(4, 40))
    X1, X2 = np.meshgrid(np.arange(a1, b1 + 1), np.arange(a2, b2 + 1), indexing="ij")
    f = random_profile(rng, M)
    vals = np.floor(L * f(X1 / L, X2 / L) + FLOOR_EPS).astype(np.int64)
    if rng.random() < 0.5:
        g = random_profile(rng, M)
        other = np.floor(L * g(X1 / L, X2 / L) + FLOOR_EPS).astype(np.int64)
        vals = np.maximum(vals, other) if rng.random() < 0.5 else np.minimum(vals, other)
    n1, n2 = vals.shape
    for _ in range(flips):
        i = int(rng.integers(0, n1))
        j = int(rng.integers(0, n2))
        d = 1 if rng.random() < 0.5 else -1
        vals[i, j] += d
        if not _flip_ok(vals, i, j, M):
            vals[i, j] -= d
    return HeightField(SiteCoord(a1, a2), vals)


def field_function(hf: HeightField) -> Callable:
    return hf.at


# ---------------------------------------------------------------------------
# Property battery


@dataclass
class CheckResult:
    name: str
    trials: int = 0
    failures: int = 0
    skipped: int = 0
    counterexamples: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.failures == 0 and self.trials > 0

    def fail(self, info: dict, keep: int = 5) -> None:
        self.failures += 1
        if len(self.counterexamples) < keep:
            self.counterexamples.append(info)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "trials": self.trials,
            "failures": self.failures,
            "skipped": self.skipped,
            "counterexamples": self.counterexamples,
            "stats": self.stats,
        }


@dataclass
class BatteryReport:
    checks: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": {k: c.to_dict() for k, c in self.checks.items()}}

    def table(self) -> str:
        lines = [f"{'check':<28}{'trials':>8}{'fail':>6}  verdict"]
        for k, c in self.checks.items():
            lines.append(f"{k:<28}{c.trials:>8}{c.failures:>6}  {'pass' if c.passed else 'FAIL'}")
        return "\n".join(lines)


SIZES = {
    # lines x sites of the clock window, time horizon
    "tiny": {"lines": 6, "sites": 16, "T": 3.0},
    "small": {"lines": 10, "sites": 40, "T": 5.0},
    "medium": {"lines": 20, "sites": 80, "T": 8.0},
}


def _rect_setup(size: dict, M: int, rng: np.random.Generator):
    """Rectangular clock window, storage with ghost lines and a random admissible field on it."""
    nl, ns, T = size["lines"], size["sites"], size["T"]
    ew = EventWindow.rectangle((0, nl - 1), (0, 2 * ns - 1))
    bounds = ew.storage_bounds(2 * M * (int(math.ceil(T)) + 8))
    lo = min(b[0] for b in bounds.values())
    hi = max(b[1] for b in bounds.values())
    l0, l1 = -1, nl
    box = (((lo - l1) // 2 - 1, (lo + l0) // 2 - 1), ((hi - l0) // 2 + 2, (hi + l1) // 2 + 2))
    return ew, bounds, box, T


def _all_points(bounds: dict):
    xs1, xs2 = [], []
    for l, (lo, hi) in bounds.items():
        d = np.arange(lo - 1, hi + 2, 2)
        xs1.append((d + 1 - l) // 2)
        xs2.append((d + 1 + l) // 2)
    return np.concatenate(xs1), np.concatenate(xs2)


def _check_monotone(
    n: int, size: dict, M: int, seed: int, mode: str = "standard", result: CheckResult | None = None
) -> tuple[CheckResult, CheckResult]:
    """Coupled pairs ``h <= h'`` and shifts ``h + c`` under common clocks."""
    mono = result or CheckResult("monotonicity")
    trans = CheckResult("translation_invariance")
    inter = CheckResult("interlacing")
    rng = np.random.default_rng(seed)
    for trial in range(n):
        ew, bounds, box, T = _rect_setup(size, M, rng)
        h = random_admissible(box, M, rng)
        g = random_admissible(box, M, rng)
        hp_vals = np.maximum(h.values, g.values + int(rng.integers(-3, 4)))
        hp = HeightField(h.origin, hp_vals)
        frozen = {-1, size["lines"]}
        cfg = ParticleArray.from_height_function(h.at, bounds, frozen)
        cfg_p = ParticleArray.from_height_function(hp.at, bounds, frozen)
        c = int(rng.integers(-5, 6))
        cfg_c = ParticleArray.from_height_function(lambda a, b: h.at(a, b) + c, bounds, frozen)
        ev = sample_events(ew, T, seed * 1_000_003 + trial)
        pts = _all_points(bounds)
        times = sorted(set([T / 4, T / 2, T] + list(np.round(rng.uniform(0, T, 2), 6))))
        ra = run(cfg, ev, times, snapshot_points=pts, mode=mode, validate=False)
        rb = run(cfg_p, ev, times, snapshot_points=pts, mode=mode, validate=False)
        rc = run(cfg_c, ev, times, snapshot_points=pts, mode=mode, validate=False)
        mono.trials += 1
        trans.trials += 1
        inter.trials += 1
        for k, t in enumerate(times):
            bad = np.flatnonzero(ra.snapshots[k] > rb.snapshots[k])
            if len(bad):
                mono.fail({"trial": trial, "time": t, "x": [int(pts[0][bad[0]]), int(pts[1][bad[0]])]})
                break
        for k, t in enumerate(times):
            if not np.array_equal(rc.snapshots[k], ra.snapshots[k] + c):
                trans.fail({"trial": trial, "time": t, "shift": c})
                break
        errs = ra.final.cfg.check() + rb.final.cfg.check()
        if errs:
            inter.fail({"trial": trial, "errors": errs[:3]})
        under = ra.underflows + rb.underflows + rc.underflows
        mono.stats["underflows"] = mono.stats.get("underflows", 0) + under
    return mono, trans, inter


def _adversarial_pair(rng, box, M, x: SiteCoord, ell: int):
    """``h'`` below ``h`` far south-west of ``x`` but typically above it near ``x``."""
    h = random_admissible(box, M, rng, flips=100)
    X1, X2 = np.meshgrid(
        np.arange(box[0][0], box[1][0] + 1), np.arange(box[0][1], box[1][1] + 1), indexing="ij"
    )
    base = h.values + int(rng.integers(0, 4))
    # steep admissible ramp crossing below h at a random distance beyond the triangle
    r1, r2 = random_slope(rng, M)
    r1 = max(r1, 0.5)
    r2 = min(r2, 1 - 1 / M - r1)
    dist = 2 * ell + int(rng.integers(0, 6))
    ramp = np.floor(r1 * (X1 - x.x1 + dist) + r2 * (X2 - x.x2 + dist) + h.at(*x) + FLOOR_EPS).astype(np.int64)
    hp = np.minimum(base, ramp)
    return h, HeightField(h.origin, hp)


def _check_locality(n: int, M: int, seed: int, T: float = 5.0, max_tries: int = 50) -> CheckResult:
    res = CheckResult("spacetime_locality")
    rng = np.random.default_rng(seed)
    x = SiteCoord(0, 0)
    depth = 14
    for trial in range(n):
        ell = int(rng.integers(1, 6))
        t = float(rng.uniform(ell, T))
        for attempt in range(max_tries):
            win = simulation_window(((-2, -2), (2, 2)), depth, T, M, ne_margin=1)
            box = win.dual_box()
            h, hp = _adversarial_pair(rng, box, M, x, ell)
            cfg = ParticleArray.from_height_function(h.at, win.bounds, win.frozen)
            cfg_p = ParticleArray.from_height_function(hp.at, win.bounds, win.frozen)
            ev = sample_events(win.events, t, int(rng.integers(0, 2**63 - 1)))
            verdict = check_spacetime_locality(cfg, cfg_p, ev, x, t, ell)
            if verdict.underflows:
                res.stats["underflow_trials"] = res.stats.get("underflow_trials", 0) + 1
                continue
            if verdict.premise:
                res.trials += 1
                globally = bool(np.all(hp.values >= h.values))
                res.stats["globally_ordered"] = res.stats.get("globally_ordered", 0) + int(globally)
                res.stats.setdefault("ell_counts", {})
                res.stats["ell_counts"][str(ell)] = res.stats["ell_counts"].get(str(ell), 0) + 1
                if not verdict.conclusion:
                    res.fail({"trial": trial, "ell": ell, "t": t})
                break
            res.stats["premise_rejected"] = res.stats.get("premise_rejected", 0) + 1
        else:
            res.skipped += 1
    return res


def _check_staircase(n: int, size: dict, M: int, seed: int, windows: int = 20) -> tuple[CheckResult, CheckResult]:
    """Every height drop of size ``k`` has a staircase of ``k`` rings; also scans the time modulus."""
    stair = CheckResult("staircase_witness")
    modulus = CheckResult("temporal_modulus")
    rng = np.random.default_rng(seed)
    worst_ratio = 0.0
    c_emp = 2 * math.e * math.sqrt(2 * DEFAULT_ALPHA)
    for trial in range(n):
        ew, bounds, box, T = _rect_setup(size, M, rng)
        h = random_admissible(box, M, rng)
        cfg = ParticleArray.from_height_function(h.at, bounds, {-1, size["lines"]})
        ev = sample_events(ew, T, seed * 7919 + trial)
        # monitor a handful of interior dual points
        mons = []
        for _ in range(6):
            l = int(rng.integers(0, size["lines"]))
            d = 2 * int(rng.integers(2, size["sites"] - 2)) + l + 1
            mons.append(((d + 1 - l) // 2, (d + 1 + l) // 2))
        r = run(cfg, ev, monitored=mons, validate=False)
        stair.trials += 1
        for xm in r.trajectories:
            jumps = r.trajectories[xm]
            for _ in range(windows):
                s = float(rng.uniform(0, T))
                tau = float(rng.uniform(0, T - s))
                k = int(np.searchsorted(jumps, s + tau, side="right") - np.searchsorted(jumps, s, side="right"))
                if k >= 1 and staircase_witness(ev, xm, s, tau, k) is None:
                    stair.fail({"trial": trial, "x": list(xm), "s": s, "tau": tau, "k": k})
                if tau >= 1:
                    ratio = k / math.sqrt(tau * (s + tau))
                    worst_ratio = max(worst_ratio, ratio)
                    modulus.trials += 1
                    if ratio > c_emp:
                        modulus.fail({"trial": trial, "x": list(xm), "s": s, "tau": tau})
    modulus.stats = {"max_ratio": worst_ratio, "C_emp": c_emp}
    return stair, modulus


def _check_truncation(n: int, M: int, seed: int, alpha: float = DEFAULT_ALPHA, L: int = 8, T: float = 1.0):
    """Deleting clocks beyond the cushion leaves measured heights unchanged."""
    res = CheckResult("truncation")
    rng = np.random.default_rng(seed)
    T_micro = L * T
    r = 2
    depth = int(math.ceil(alpha * T_micro))
    big = simulation_window(((-r, -r), (r, r)), 2 * depth, T_micro, M, ne_margin=L)
    small = EventWindow.from_box((-r - depth, -r - depth), (r, r))
    X1, X2 = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    pts = (X1.ravel(), X2.ravel())
    times = [T_micro / 2, T_micro]
    for trial in range(n):
        f = random_profile(rng, M)
        shift = rng.uniform(-3, 3, 2)
        g = MacroProfile(lambda a, b, f=f, s=shift: f(a + s[0], b + s[1]), M)
        h = discretized_height(g, L)
        cfg = big.particles(h)
        ev = sample_events(big.events, T_micro, seed * 104729 + trial)
        full = run(cfg, ev, times, snapshot_points=pts, validate=False)
        cut = run(cfg, ev.restrict(small), times, snapshot_points=pts, validate=False)
        res.trials += 1
        if full.underflows or cut.underflows:
            res.stats["underflows"] = res.stats.get("underflows", 0) + full.underflows + cut.underflows
        for k in range(len(times)):
            if not np.array_equal(full.snapshots[k], cut.snapshots[k]):
                res.fail({"trial": trial, "time": times[k], "alpha": alpha})
                break
    res.stats["alpha"] = alpha
    return res


def calibrate_alpha(alphas: Sequence[float], n: int, M: int = 4, seed: int = 0) -> dict:
    """Truncation failure counts per candidate ``alpha``; smallest passing value first."""
    table = {float(a): _check_truncation(n, M, seed, a).failures for a in alphas}
    passing = [a for a, fcount in sorted(table.items()) if fcount == 0]
    return {"failures": table, "smallest_passing": passing[0] if passing else None}


def _negative_control(n: int, size: dict, M: int, seed: int) -> CheckResult:
    """The mutated rule must be caught by the monotonicity or interlacing checks."""
    res = CheckResult("negative_control")
    mono, _, inter = _check_monotone(n, size, M, seed, mode="ignore_upper")
    res.trials = 1
    res.stats = {"monotonicity_failures": mono.failures, "interlacing_failures": inter.failures}
    if mono.failures + inter.failures == 0:
        res.fail({"reason": "mutated jump rule went undetected"})
    return res


def property_battery(
    seeds: Sequence[int],
    size: str = "small",
    trials: int = 1000,
    M: int = 4,
    progress: Progress = None,
) -> BatteryReport:
    """All exact checks on randomised configurations; ``trials`` per check, split over seeds."""
    if size not in SIZES:
        raise ValueError(f"unknown size {size!r}; choose from {sorted(SIZES)}")
    sz = SIZES[size]
    checks: dict[str, CheckResult] = {}
    per = max(1, trials // len(seeds))

    def merge(c: CheckResult):
        if c.name not in checks:
            checks[c.name] = c
            return
        m = checks[c.name]
        m.trials += c.trials
        m.failures += c.failures
        m.skipped += c.skipped
        m.counterexamples.extend(c.counterexamples[: max(0, 5 - len(m.counterexamples))])
        for k, v in c.stats.items():
            if isinstance(v, (int, float)) and k not in ("C_emp", "alpha"):
                m.stats[k] = max(m.stats.get(k, v), v) if k == "max_ratio" else m.stats.get(k, 0) + v
            elif isinstance(v, dict):
                d = m.stats.setdefault(k, {})
                for kk, vv in v.items():
                    d[kk] = d.get(kk, 0) + vv
            else:
                m.stats[k] = v

    for s in seeds:
        for c in _check_monotone(per, sz, M, s):
            merge(c)
        if progress:
            progress(f"battery seed={s}: monotonicity done")
        merge(_check_locality(per, M, s))
        if progress:
            progress(f"battery seed={s}: locality done")
        for c in _check_staircase(per, sz, M, s):
            merge(c)
        merge(_check_truncation(per, M, s))
        if progress:
            progress(f"battery seed={s}: staircase and truncation done")
        merge(_negative_control(max(1, per // 10), sz, M, s))
    return BatteryReport(checks)
