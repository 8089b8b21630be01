"""Growth speed ``v`` of the interlaced particle dynamics and related analytics.

The speed function

    v(rho) = sin(pi rho1) sin(pi rho2) / (pi sin(pi (rho1 + rho2)))

is defined on the open slope triangle ``T = {rho1, rho2 >= 0, rho1 + rho2 < 1}``
with ``v(0, 0) = 0``.  ``T_M`` is the closed sub-triangle with
``rho1 + rho2 <= 1 - 1/M``.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

__all__ = [
    "DomainError",
    "GradientTriple",
    "SlopeVector",
    "gradient_bound",
    "hessian_det_sign",
    "max_speed",
    "project_triangle",
    "rho_residual",
    "solve_rho",
    "speed",
    "speed_array",
    "speed_extended",
    "speed_gradient",
]

# below this slope sum the 0/0 form is replaced by the v(0) = 0 convention
_ORIGIN_GUARD = 1e-12


class DomainError(ValueError):
    """Slope outside the region where the requested quantity is defined."""


class SlopeVector(NamedTuple):
    rho1: float
    rho2: float

    def in_T(self) -> bool:
        return self.rho1 >= 0 and self.rho2 >= 0 and self.rho1 + self.rho2 < 1

    def in_T_M(self, M: int) -> bool:
        return (
            self.rho1 >= 0
            and self.rho2 >= 0
            and self.rho1 + self.rho2 <= 1.0 - 1.0 / M
        )

    def in_interior(self) -> bool:
        return self.rho1 > 0 and self.rho2 > 0 and self.rho1 + self.rho2 < 1


class GradientTriple(NamedTuple):
    """Space-time gradient ``(d/dx1, d/dx2, d/dt)`` of a test function."""

    g1: float
    g2: float
    gt: float


def _as_slope(rho) -> SlopeVector:
    if isinstance(rho, SlopeVector):
        return rho
    r1, r2 = rho
    return SlopeVector(float(r1), float(r2))


def speed(rho) -> float:
    """Growth speed at slope ``rho``; raises :class:`DomainError` outside ``T``."""
    rho = _as_slope(rho)
    if not rho.in_T():
        raise DomainError(f"slope {tuple(rho)} is outside the triangle T")
    s = rho.rho1 + rho.rho2
    if s < _ORIGIN_GUARD:
        return 0.0
    return (
        math.sin(math.pi * rho.rho1)
        * math.sin(math.pi * rho.rho2)
        / (math.pi * math.sin(math.pi * s))
    )


def speed_array(rho1, rho2) -> np.ndarray:
    """Vectorised :func:`speed` without domain checks (callers project first)."""
    rho1 = np.asarray(rho1, dtype=float)
    rho2 = np.asarray(rho2, dtype=float)
    s = rho1 + rho2
    den = np.pi * np.sin(np.pi * s)
    num = np.sin(np.pi * rho1) * np.sin(np.pi * rho2)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(s < _ORIGIN_GUARD, 0.0, num / np.where(den == 0, 1.0, den))
    return out


def speed_gradient(rho) -> tuple[float, float]:
    """Closed-form gradient of :func:`speed` in the interior of ``T``."""
    rho = _as_slope(rho)
    if not rho.in_interior():
        raise DomainError(f"gradient requires an interior slope, got {tuple(rho)}")
    d = math.sin(math.pi * (rho.rho1 + rho.rho2)) ** 2
    return (
        math.sin(math.pi * rho.rho2) ** 2 / d,
        math.sin(math.pi * rho.rho1) ** 2 / d,
    )


def _hessian_fd(rho: SlopeVector, step: float) -> np.ndarray:
    r1, r2 = rho
    h = step

    def f(a, b):
        return speed((r1 + a, r2 + b))

    v0 = f(0.0, 0.0)
    vxx = (f(h, 0.0) - 2 * v0 + f(-h, 0.0)) / h**2
    vyy = (f(0.0, h) - 2 * v0 + f(0.0, -h)) / h**2
    vxy = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4 * h**2)
    return np.array([[vxx, vxy], [vxy, vyy]])


def hessian_det_sign(rho, step: float = 1e-4) -> int:
    """Sign of the finite-difference Hessian determinant of ``v`` at ``rho``.

    The stencil must stay inside ``T``: points closer than ``2 * step`` to the
    boundary raise :class:`DomainError`.
    """
    rho = _as_slope(rho)
    margin = min(rho.rho1, rho.rho2, (1.0 - rho.rho1 - rho.rho2) / math.sqrt(2))
    if margin < 2 * step:
        raise DomainError(
            f"slope {tuple(rho)} is within {margin:.3g} of the boundary; "
            f"step {step} underflows"
        )
    det = float(np.linalg.det(_hessian_fd(rho, step)))
    return int(np.sign(det))


def project_triangle(rho1, rho2, cap: float):
    """Euclidean projection onto ``{rho1, rho2 >= 0, rho1 + rho2 <= cap}``.

    Works elementwise on arrays; returns a pair of arrays (or floats).
    """
    a = np.asarray(rho1, dtype=float)
    b = np.asarray(rho2, dtype=float)
    inside = (a >= 0) & (b >= 0) & (a + b <= cap)
    # nearest point on each edge, then the closest of the three
    e_left = (np.zeros_like(a), np.clip(b, 0.0, cap))
    e_bottom = (np.clip(a, 0.0, cap), np.zeros_like(b))
    t = np.clip((a - b + cap) / 2, 0.0, cap)
    e_hyp = (t, cap - t)
    best_a, best_b = e_left
    best_d = (a - best_a) ** 2 + (b - best_b) ** 2
    for ca, cb in (e_bottom, e_hyp):
        d = (a - ca) ** 2 + (b - cb) ** 2
        closer = d < best_d
        best_a = np.where(closer, ca, best_a)
        best_b = np.where(closer, cb, best_b)
        best_d = np.where(closer, d, best_d)
    pa = np.where(inside, a, best_a)
    pb = np.where(inside, b, best_b)
    if pa.ndim == 0:
        return float(pa), float(pb)
    return pa, pb


def speed_extended(rho, M: int) -> float:
    """Lipschitz extension of ``v`` to the plane: ``v`` of the projection onto ``T_M``."""
    if M < 2:
        raise ValueError("M must be at least 2")
    r1, r2 = rho
    p1, p2 = project_triangle(r1, r2, 1.0 - 1.0 / M)
    return speed((p1, p2))


def gradient_bound(M: int) -> float:
    """``sup`` over ``T_M`` of ``max(|dv/drho1|, |dv/drho2|)``.

    For fixed ``s = rho1 + rho2`` the numerator ``sin^2`` peaks at ``rho_k =
    min(s, 1/2)``, which gives ``1`` for ``s <= 1/2`` and ``1/sin^2(pi s)``
    otherwise; the bound is attained on the hypotenuse ``s = 1 - 1/M``.
    """
    if M < 2:
        raise ValueError("M must be at least 2")
    return 1.0 / math.sin(math.pi / M) ** 2


def max_speed(M: int) -> float:
    """``S_M = max`` of ``v`` over ``T_M``, reached at the hypotenuse midpoint."""
    if M < 2:
        raise ValueError("M must be at least 2")
    c = 1.0 - 1.0 / M
    return math.tan(math.pi * c / 2) / (2 * math.pi)


def _speed_hv(rho_h: float, rho_v: float) -> float:
    return speed(((rho_h + rho_v) / 2, (rho_h - rho_v) / 2))


def rho_residual(rho, g) -> tuple[float, float]:
    """Residuals of the two slope equations at ``rho`` for gradient ``g``."""
    rho = _as_slope(rho)
    g = GradientTriple(*g)
    r_diff = (rho.rho1 - rho.rho2) - (g.g1 - g.g2)
    r_sum = rho.rho1 + rho.rho2 + speed(rho) - (g.g1 + g.g2 - g.gt)
    return r_diff, r_sum


def solve_rho(g, M: int | None = None) -> SlopeVector:
    """Unique ``rho`` in ``T`` with ``rho1 - rho2 = g1 - g2`` and
    ``rho1 + rho2 + v(rho) = g1 + g2 - gt``.

    Bisection on ``rho_h = rho1 + rho2`` over ``[|rho_v|, 1)``, where
    ``rho_h + v`` is strictly increasing.  ``M`` only validates that the
    result lies in ``T_M``.
    """
    g = GradientTriple(*map(float, g))
    if not SlopeVector(g.g1, g.g2).in_T():
        raise DomainError(f"spatial gradient {(g.g1, g.g2)} is outside T")
    if g.gt > 0:
        raise DomainError(f"time derivative must be <= 0, got {g.gt}")

    rho_v = g.g1 - g.g2
    target = g.g1 + g.g2 - g.gt
    lo, hi = abs(rho_v), 1.0
    f_lo = lo + _speed_hv(lo, rho_v) - target
    if f_lo >= 0:
        rho_h = lo
    else:
        while True:
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if mid + _speed_hv(mid, rho_v) - target < 0:
                lo = mid
            else:
                hi = mid
        f_hi = hi + _speed_hv(hi, rho_v) - target if hi < 1.0 else math.inf
        f_lo = lo + _speed_hv(lo, rho_v) - target
        rho_h = lo if abs(f_lo) <= abs(f_hi) else hi

    rho = SlopeVector(max((rho_h + rho_v) / 2, 0.0), max((rho_h - rho_v) / 2, 0.0))
    if M is not None and not rho.in_T_M(M):
        raise DomainError(f"solution {tuple(rho)} is outside T_{M}")
    return rho
