"""Monotone finite-difference solver for ``u_t + v(grad u) = 0``.

Global Lax-Friedrichs with central differences.  Slopes are projected onto
``T_{M+1}`` before ``v`` is evaluated, which turns ``v`` into a Lipschitz
function on the whole plane with partial derivatives bounded by
``gradient_bound(M + 1)``; those bounds are the dissipation coefficients.
Ghost cells use linear extrapolation and the grid is padded by the distance
characteristics can travel in time ``T``, so only the interior is reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from numba import njit

from .hamiltonian import gradient_bound, speed_array

__all__ = [
    "CheckVerdict",
    "GridSolution",
    "MacroProfile",
    "ProbeReport",
    "QuadraticBump",
    "comparison_check",
    "default_bumps",
    "scheme_tolerance",
    "slope_class_check",
    "solve",
    "viscosity_inequality_probe",
]


# ---------------------------------------------------------------------------
# Initial profiles


@dataclass(frozen=True)
class MacroProfile:
    """Macroscopic initial height ``f`` together with its slope class ``M``.

    ``pieces`` (when known) lists affine maps ``(rho1, rho2, c)`` combined by
    ``op`` (``"max"`` or ``"min"``); it is informational and lets tests build
    closed-form references.
    """

    evaluator: Callable
    M: int
    name: str = "profile"
    pieces: tuple = ()
    op: str = ""

    def __call__(self, x1, x2):
        return np.asarray(self.evaluator(np.asarray(x1, float), np.asarray(x2, float)), dtype=float)

    @classmethod
    def linear(cls, rho, M: int, c: float = 0.0) -> "MacroProfile":
        r1, r2 = float(rho[0]), float(rho[1])
        return cls(
            lambda x1, x2: r1 * x1 + r2 * x2 + c,
            M,
            f"linear({r1:g},{r2:g})",
            ((r1, r2, float(c)),),
            "max",
        )

    @classmethod
    def piecewise(cls, pieces: Sequence, M: int, op: str = "max") -> "MacroProfile":
        """``op`` over affine maps ``rho . x + c`` given as ``(rho1, rho2, c)``."""
        if op not in ("max", "min"):
            raise ValueError("op must be 'max' or 'min'")
        arr = np.array([[float(a), float(b), float(c)] for a, b, c in pieces])
        reduce = np.maximum.reduce if op == "max" else np.minimum.reduce

        def f(x1, x2):
            return reduce([a * x1 + b * x2 + c for a, b, c in arr])

        name = f"{op}(" + ",".join(f"[{a:g},{b:g};{c:g}]" for a, b, c in arr) + ")"
        return cls(f, M, name, tuple(map(tuple, arr)), op)

    def shifted(self, c: float) -> "MacroProfile":
        ev = self.evaluator
        pieces = tuple((a, b, k + c) for a, b, k in self.pieces)
        return MacroProfile(lambda x1, x2: ev(x1, x2) + c, self.M, f"{self.name}+{c:g}", pieces, self.op)

    def check_membership(self, domain, spacing: float = 1 / 64, tol: float = 1e-9):
        """Sampled test of monotonicity and the diagonal slope cap ``1 - 1/M``.

        Returns ``(ok, message)``.
        """
        (a1, b1), (a2, b2) = domain
        x1 = np.arange(a1, b1 + spacing / 2, spacing)
        x2 = np.arange(a2, b2 + spacing / 2, spacing)
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        u = self(X1, X2)
        d1 = np.diff(u, axis=0) / spacing
        d2 = np.diff(u, axis=1) / spacing
        dd = (u[1:, 1:] - u[:-1, :-1]) / spacing
        cap = 1.0 - 1.0 / self.M
        if d1.size and d1.min() < -tol:
            return False, f"decreasing in x1 (slope {d1.min():.3g})"
        if d2.size and d2.min() < -tol:
            return False, f"decreasing in x2 (slope {d2.min():.3g})"
        if dd.size and dd.max() > cap + tol:
            return False, f"diagonal slope {dd.max():.4g} exceeds {cap:.4g}"
        return True, ""


# ---------------------------------------------------------------------------
# Numerical kernel


@njit(cache=True, inline="always")
def _speed_projected(d1, d2, cap):
    # Euclidean projection onto {p >= 0, p1 + p2 <= cap}
    if d1 >= 0.0 and d2 >= 0.0 and d1 + d2 <= cap:
        p1, p2 = d1, d2
    else:
        p1, p2 = 0.0, min(max(d2, 0.0), cap)
        best = d1 * d1 + (d2 - p2) ** 2
        q1 = min(max(d1, 0.0), cap)
        d = (d1 - q1) ** 2 + d2 * d2
        if d < best:
            p1, p2, best = q1, 0.0, d
        t = min(max(0.5 * (d1 - d2 + cap), 0.0), cap)
        d = (d1 - t) ** 2 + (d2 - cap + t) ** 2
        if d < best:
            p1, p2 = t, cap - t
    s = p1 + p2
    if s < 1e-12:
        return 0.0
    return math.sin(math.pi * p1) * math.sin(math.pi * p2) / (math.pi * math.sin(math.pi * s))


@njit(cache=True, nogil=True)
def _lf_step(u, out, dt, dx, s1, s2, cap):
    nx, ny = u.shape
    c1 = dt * s1 / (2.0 * dx)
    c2 = dt * s2 / (2.0 * dx)
    inv = 1.0 / (2.0 * dx)
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            uc = u[i, j]
            d1 = (u[i + 1, j] - u[i - 1, j]) * inv
            d2 = (u[i, j + 1] - u[i, j - 1]) * inv
            out[i, j] = (
                uc
                - dt * _speed_projected(d1, d2, cap)
                + c1 * (u[i + 1, j] - 2.0 * uc + u[i - 1, j])
                + c2 * (u[i, j + 1] - 2.0 * uc + u[i, j - 1])
            )
    # ghost layer by linear extrapolation
    for j in range(1, ny - 1):
        out[0, j] = 2.0 * out[1, j] - out[2, j]
        out[nx - 1, j] = 2.0 * out[nx - 2, j] - out[nx - 3, j]
    for i in range(nx):
        out[i, 0] = 2.0 * out[i, 1] - out[i, 2]
        out[i, ny - 1] = 2.0 * out[i, ny - 2] - out[i, ny - 3]


def lf_update(u: np.ndarray, dt: float, dx: float, sigma: tuple[float, float], M: int) -> np.ndarray:
    """One scheme step on a padded array (interior plus one ghost layer)."""
    out = np.empty_like(u)
    _lf_step(np.ascontiguousarray(u, dtype=float), out, dt, dx, sigma[0], sigma[1], 1.0 - 1.0 / (M + 1))
    return out


def scheme_tolerance(dx: float, dt: float) -> float:
    return 2.0 * (dx + dt)


# ---------------------------------------------------------------------------
# Solutions


@dataclass(eq=False)
class GridSolution:
    """``values[i, j, n]`` approximates ``u(origin + (i, j) dx, times[n])``."""

    dx: float
    dt: float
    origin: tuple[float, float]
    values: np.ndarray
    times: np.ndarray
    M: int
    cushion: int = 0
    sigma: tuple[float, float] = (0.0, 0.0)
    meta: dict = field(default_factory=dict)

    @property
    def eps(self) -> float:
        return scheme_tolerance(self.dx, self.dt)

    @property
    def x1(self) -> np.ndarray:
        return self.origin[0] + self.dx * np.arange(self.values.shape[0])

    @property
    def x2(self) -> np.ndarray:
        return self.origin[1] + self.dx * np.arange(self.values.shape[1])

    def time_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 0.5 * self.dt + 1e-12:
            raise ValueError(f"time {t} was not stored")
        return k

    def at(self, x1, x2, t: float) -> np.ndarray:
        """Bilinear interpolation in space at a stored time."""
        u = self.values[:, :, self.time_index(t)]
        fi = (np.asarray(x1, float) - self.origin[0]) / self.dx
        fj = (np.asarray(x2, float) - self.origin[1]) / self.dx
        # snap near-integers so grid points are read exactly
        fi = np.where(np.abs(fi - np.rint(fi)) < 1e-9, np.rint(fi), fi)
        fj = np.where(np.abs(fj - np.rint(fj)) < 1e-9, np.rint(fj), fj)
        n1, n2 = u.shape
        if np.any((fi < 0) | (fi > n1 - 1) | (fj < 0) | (fj > n2 - 1)):
            raise ValueError("point outside the reported grid")
        i0 = np.minimum(np.floor(fi).astype(int), n1 - 2)
        j0 = np.minimum(np.floor(fj).astype(int), n2 - 2)
        a = fi - i0
        b = fj - j0
        return (
            (1 - a) * (1 - b) * u[i0, j0]
            + a * (1 - b) * u[i0 + 1, j0]
            + (1 - a) * b * u[i0, j0 + 1]
            + a * b * u[i0 + 1, j0 + 1]
        )


def _grid_axis(lo: float, hi: float, dx: float) -> int:
    n = (hi - lo) / dx
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"domain side {hi - lo} is not a multiple of dx={dx}")
    return int(round(n)) + 1


def solve(
    f: MacroProfile,
    T: float,
    domain,
    dx: float,
    times: Sequence[float] | None = None,
    dt: float | None = None,
    check_profile: bool = True,
    progress: Callable | None = None,
) -> GridSolution:
    """Approximate the viscosity solution with ``u(., 0) = f`` on ``domain x [0, T]``.

    ``domain = ((a1, b1), (a2, b2))`` is the reported rectangle; ``times``
    (default ``[0, T]``) are stored at the nearest step.  ``dt`` defaults to
    the largest step below the CFL bound that divides ``T``.
    """
    if dx <= 0:
        raise ValueError("dx must be positive")
    if T < 0:
        raise ValueError("T must be non-negative")
    M = f.M
    sig = gradient_bound(M + 1) * (1 + 1e-9)
    sigma = (sig, sig)
    dt_max = dx / (2 * (sigma[0] + sigma[1]))
    if dt is None:
        steps = max(1, math.ceil(T / dt_max)) if T > 0 else 0
        dt = T / steps if steps else dt_max
    elif dt > dt_max * (1 + 1e-12):
        raise ValueError(f"CFL violation: dt={dt} exceeds {dt_max}")
    else:
        steps = int(round(T / dt))
        if abs(steps * dt - T) > 1e-9 * max(T, 1):
            raise ValueError("dt must divide T")
    times = [0.0, float(T)] if times is None else sorted(float(t) for t in times)
    if times and (times[0] < 0 or times[-1] > T + 1e-12):
        raise ValueError("requested times must lie in [0, T]")

    (a1, b1), (a2, b2) = domain
    n1 = _grid_axis(a1, b1, dx)
    n2 = _grid_axis(a2, b2, dx)
    pad = math.ceil(sig * T / dx) + 2
    if check_profile:
        ok, msg = f.check_membership(
            ((a1 - pad * dx, b1 + pad * dx), (a2 - pad * dx, b2 + pad * dx)),
            spacing=max(dx, (b1 - a1 + 2 * pad * dx) / 256),
        )
        if not ok:
            raise ValueError(f"profile is not in the slope class M={M}: {msg}")

    # interior padded by `pad` cells plus one ghost layer per side
    g1 = a1 + dx * np.arange(-pad - 1, n1 + pad + 1)
    g2 = a2 + dx * np.arange(-pad - 1, n2 + pad + 1)
    X1, X2 = np.meshgrid(g1, g2, indexing="ij")
    u = np.ascontiguousarray(f(X1, X2), dtype=float)
    buf = np.empty_like(u)
    cap = 1.0 - 1.0 / (M + 1)

    want = [int(round(t / dt)) if dt > 0 else 0 for t in times]
    out = np.empty((n1, n2, len(times)))
    inner = (slice(pad + 1, pad + 1 + n1), slice(pad + 1, pad + 1 + n2))
    k = 0
    for n in range(steps + 1):
        while k < len(want) and want[k] == n:
            out[:, :, k] = u[inner]
            k += 1
        if n == steps or k == len(want):
            break
        _lf_step(u, buf, dt, dx, sigma[0], sigma[1], cap)
        u, buf = buf, u
        if progress is not None and n % 200 == 0:
            progress(n, steps)
    return GridSolution(
        dx=float(dx),
        dt=float(dt),
        origin=(float(a1), float(a2)),
        values=out,
        times=np.array([w * dt for w in want]),
        M=M,
        cushion=pad,
        sigma=sigma,
        meta={"profile": f.name, "T": float(T), "steps": steps},
    )


# ---------------------------------------------------------------------------
# Checks


class CheckVerdict(NamedTuple):
    ok: bool
    worst: float
    kind: str = ""
    location: tuple | None = None


def comparison_check(f: MacroProfile, g: MacroProfile, T: float, domain, dx: float, times=None) -> CheckVerdict:
    """Order preservation: ``solve(f) <= solve(g) + eps`` everywhere."""
    sf = solve(f, T, domain, dx, times)
    sg = solve(g, T, domain, dx, times)
    diff = sf.values - sg.values
    idx = np.unravel_index(int(np.argmax(diff)), diff.shape)
    worst = float(diff[idx])
    loc = (float(sf.x1[idx[0]]), float(sf.x2[idx[1]]), float(sf.times[idx[2]]))
    return CheckVerdict(worst <= sf.eps, worst, "order", loc)


def slope_class_check(sol: GridSolution, M: int | None = None) -> CheckVerdict:
    """Discrete slopes in ``[-eps, 1 + eps]``, diagonal slope ``<= 1 - 1/M + eps``, ``u`` non-increasing in time."""
    M = sol.M if M is None else M
    eps = sol.eps
    u = sol.values
    cap = 1.0 - 1.0 / M
    checks = []
    d1 = np.diff(u, axis=0) / sol.dx
    d2 = np.diff(u, axis=1) / sol.dx
    dd = (u[1:, 1:, :] - u[:-1, :-1, :]) / sol.dx
    checks.append(("grad1_low", -d1 - eps, d1))
    checks.append(("grad1_high", d1 - 1 - eps, d1))
    checks.append(("grad2_low", -d2 - eps, d2))
    checks.append(("grad2_high", d2 - 1 - eps, d2))
    checks.append(("diag_low", -dd - eps, dd))
    checks.append(("diag_high", dd - cap - eps, dd))
    if u.shape[2] > 1:
        dtu = np.diff(u, axis=2)
        checks.append(("time_increase", dtu - eps, dtu))
    worst_kind, worst_val, worst_loc = "", -np.inf, None
    for kind, excess, _ in checks:
        if excess.size == 0:
            continue
        idx = np.unravel_index(int(np.argmax(excess)), excess.shape)
        if excess[idx] > worst_val:
            worst_kind, worst_val = kind, float(excess[idx])
            worst_loc = (float(sol.x1[idx[0]]), float(sol.x2[idx[1]]), int(idx[2]))
    return CheckVerdict(worst_val <= 0, worst_val, worst_kind, worst_loc)


class QuadraticBump(NamedTuple):
    """``phi = p . (x - x0) + q (t - t0) + k (|x - x0|^2 + (t - t0)^2)``, with ``k`` signed.

    ``side = "above"`` probes the sub-solution inequality, ``"below"`` the
    super-solution inequality.
    """

    x0: tuple[float, float]
    t0: float
    p: tuple[float, float]
    q: float
    k: float
    side: str


class ProbeReport(NamedTuple):
    residuals: np.ndarray
    skipped_guard: int
    no_touch: int
    worst: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.worst <= self.tolerance


def _phi(b: QuadraticBump, X1, X2, t):
    dx1, dx2, dtt = X1 - b.x0[0], X2 - b.x0[1], t - b.t0
    return b.p[0] * dx1 + b.p[1] * dx2 + b.q * dtt + b.k * (dx1**2 + dx2**2 + dtt**2)


def viscosity_inequality_probe(
    sol: GridSolution,
    bumps: Sequence[QuadraticBump],
    radius: float = 0.1,
    C: float = 4.0,
) -> ProbeReport:
    """Touch ``sol`` with each bump near its centre and test the viscosity inequality.

    For ``side="above"`` the touching point maximises ``u - phi`` over a
    space-time neighbourhood; the residual there is ``phi_t + v(grad phi)``
    (must be ``<= C (dx + dt)``).  For ``"below"`` the point minimises
    ``u - phi`` and the residual is ``-(phi_t + v(grad phi))``.  Touching
    points on the neighbourhood boundary are counted as ``no_touch``; bumps
    whose gradient leaves ``T`` there are skipped.
    """
    tol = C * (sol.dx + sol.dt)
    x1, x2, ts = sol.x1, sol.x2, sol.times
    res, skipped, missed = [], 0, 0
    for b in bumps:
        mi = np.abs(x1 - b.x0[0]) <= radius
        mj = np.abs(x2 - b.x0[1]) <= radius
        mt = np.abs(ts - b.t0) <= radius
        if mi.sum() < 3 or mj.sum() < 3 or mt.sum() < 1:
            missed += 1
            continue
        X1, X2, TT = np.meshgrid(x1[mi], x2[mj], ts[mt], indexing="ij")
        w = sol.values[np.ix_(mi, mj, mt)] - _phi(b, X1, X2, TT)
        sign = 1.0 if b.side == "above" else -1.0
        if b.k == 0 and np.ptp(w) < 1e-9:
            # flat contact: every point touches, use the centre
            pt = (b.x0[0], b.x0[1], b.t0)
        else:
            idx = np.unravel_index(int(np.argmax(sign * w)), w.shape)
            interior_space = 0 < idx[0] < w.shape[0] - 1 and 0 < idx[1] < w.shape[1] - 1
            tk = ts[mt][idx[2]]
            # in time the contact may sit at the final stored time (one-sided test)
            interior_time = w.shape[2] == 1 or 0 < idx[2] < w.shape[2] - 1 or tk == ts[-1]
            if not (interior_space and interior_time):
                missed += 1
                continue
            pt = (X1[idx], X2[idx], TT[idx])
        g1 = b.p[0] + 2 * b.k * (pt[0] - b.x0[0])
        g2 = b.p[1] + 2 * b.k * (pt[1] - b.x0[1])
        gt = b.q + 2 * b.k * (pt[2] - b.t0)
        if not (g1 >= 0 and g2 >= 0 and g1 + g2 < 1):
            skipped += 1
            continue
        r = gt + float(speed_array(g1, g2))
        res.append(sign * r)
    arr = np.array(res)
    worst = float(arr.max()) if len(arr) else -np.inf
    return ProbeReport(arr, skipped, missed, worst, tol)


def default_bumps(
    sol: GridSolution, n: int, seed: int = 0, k: float = 2.0, max_curvature: float | None = 1.0
) -> list[QuadraticBump]:
    """Bumps centred at random interior grid points, tangent to the discrete derivatives there.

    With ``max_curvature`` only points where every second difference of ``u``
    is below that bound (smooth regions) are used as centres.
    """
    rng = np.random.default_rng(seed)
    u = sol.values
    n1, n2, nt = u.shape
    out = []
    if nt < 2 or n1 < 5 or n2 < 5:
        return out
    cand_i, cand_j, cand_m = np.meshgrid(
        np.arange(2, n1 - 2), np.arange(2, n2 - 2), np.arange(1, nt), indexing="ij"
    )
    cand = np.column_stack([cand_i.ravel(), cand_j.ravel(), cand_m.ravel()])
    if max_curvature is not None:
        h2 = sol.dx**2
        c11 = np.abs(u[2:, 1:-1] - 2 * u[1:-1, 1:-1] + u[:-2, 1:-1]) / h2
        c22 = np.abs(u[1:-1, 2:] - 2 * u[1:-1, 1:-1] + u[1:-1, :-2]) / h2
        curv = np.maximum(c11, c22)
        ci, cj, cm = cand.T
        cand = cand[curv[ci - 1, cj - 1, cm] <= max_curvature]
    if len(cand) == 0:
        return out
    picks = rng.choice(len(cand), size=min(n, len(cand)), replace=False)
    for i, j, m in cand[np.sort(picks)]:
        p1 = (u[i + 1, j, m] - u[i - 1, j, m]) / (2 * sol.dx)
        p2 = (u[i, j + 1, m] - u[i, j - 1, m]) / (2 * sol.dx)
        q = (u[i, j, m] - u[i, j, m - 1]) / (sol.times[m] - sol.times[m - 1])
        x0 = (float(sol.x1[i]), float(sol.x2[j]))
        for side, kk in (("above", k), ("below", -k)):
            out.append(QuadraticBump(x0, float(sol.times[m]), (p1, p2), q, kk, side))
    return out
