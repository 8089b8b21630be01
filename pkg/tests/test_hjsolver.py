
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from interlaced_growth.hamiltonian import speed, speed_array
from interlaced_growth.hjsolver import (
    GridSolution,
    MacroProfile,
    QuadraticBump,
    comparison_check,
    default_bumps,
    lf_update,
    scheme_tolerance,
    slope_class_check,
    solve,
    viscosity_inequality_probe,
)

SHOCK = MacroProfile.piecewise([(0.1, 0.5, 0.0), (0.5, 0.2, 0.1)], 4)
DOM = ((-0.5, 0.5), (-0.5, 0.5))


def hopf(a, b, X1, X2, t, n_lambda=4001, batch=4096):
    """Solution for ``max`` of two affine maps: sup over the segment of slopes.

    ``u(x, t) = max_lambda [p . x + c - t v(p)]`` with ``p, c`` interpolated
    between the two pieces; evaluated in batches of points.
    """
    lam = np.linspace(0.0, 1.0, n_lambda)
    p1 = (1 - lam) * a[0] + lam * b[0]
    p2 = (1 - lam) * a[1] + lam * b[1]
    c = (1 - lam) * a[2] + lam * b[2]
    v = speed_array(p1, p2)
    x1, x2 = np.ravel(X1), np.ravel(X2)
    out = np.empty(x1.shape)
    for s in range(0, len(x1), batch):
        e = slice(s, s + batch)
        vals = x1[e, None] * p1 + x2[e, None] * p2 + c - t * v
        out[e] = vals.max(axis=1)
    return out.reshape(np.shape(X1))


class TestProfiles:
    def test_linear(self):
        f = MacroProfile.linear((0.2, 0.3), 4, 1.0)
        assert f(1.0, 2.0) == pytest.approx(1.8)

    def test_piecewise_ops(self):
        lo = MacroProfile.piecewise([(0.1, 0.1, 0.0), (0.3, 0.1, -0.2)], 4, "min")
        assert lo(0.0, 0.0) == pytest.approx(-0.2)
        with pytest.raises(ValueError):
            MacroProfile.piecewise([(0.1, 0.1, 0.0)], 4, "sum")

    def test_membership(self):
        assert SHOCK.check_membership(DOM)[0]
        bad = MacroProfile.linear((0.5, 0.4), 4)
        ok, msg = bad.check_membership(DOM)
        assert not ok and msg


class TestLinearData:
    @pytest.mark.parametrize("rho", [(1 / 3, 1 / 3), (0.25, 0.25), (0.1, 0.5)])
    def test_exact(self, rho):
        f = MacroProfile.linear(rho, 4)
        sol = solve(f, 1.0, DOM, 1 / 32, times=[0, 0.5, 1.0])
        X1, X2 = np.meshgrid(sol.x1, sol.x2, indexing="ij")
        err = max(
            np.abs(sol.values[:, :, n] - (rho[0] * X1 + rho[1] * X2 - speed(rho) * t)).max()
            for n, t in enumerate(sol.times)
        )
        assert err <= 3 * sol.dt * speed(rho)

    def test_boundary_slope_is_stationary(self):
        f = MacroProfile.linear((0.4, 0.0), 4)
        sol = solve(f, 1.0, DOM, 1 / 16)
        assert np.allclose(sol.values[:, :, -1], sol.values[:, :, 0], atol=1e-13)


@pytest.fixture(scope="module")
def sols():
    return {dx: solve(SHOCK, 1.0, DOM, dx, times=[0.5, 1.0]) for dx in (1 / 16, 1 / 32, 1 / 64)}


class TestShockProfile:
    def errors(self, sols):
        out = {}
        for dx, sol in sols.items():
            X1, X2 = np.meshgrid(sol.x1, sol.x2, indexing="ij")
            out[dx] = max(
                np.abs(sol.values[:, :, n] - hopf((0.1, 0.5, 0.0), (0.5, 0.2, 0.1), X1, X2, t)).max()
                for n, t in enumerate(sol.times)
            )
        return out

    def test_against_hopf_formula(self, sols):
        err = self.errors(sols)
        assert err[1 / 64] < 0.015
        # first order: halving dx at least cuts the error by a third
        assert err[1 / 32] < 0.67 * err[1 / 16]
        assert err[1 / 64] < 0.67 * err[1 / 32]

    def test_self_convergence(self, sols):
        coarse, fine = sols[1 / 16], sols[1 / 64]
        diff = np.abs(coarse.values - fine.values[::4, ::4, :]).max()
        assert diff <= 1.0 * (1 / 16)

    def test_envelope(self, sols):
        sol = sols[1 / 32]
        X1, X2 = np.meshgrid(sol.x1, sol.x2, indexing="ij")
        for n, t in enumerate(sol.times):
            a = 0.1 * X1 + 0.5 * X2 - speed((0.1, 0.5)) * t
            b = 0.5 * X1 + 0.2 * X2 + 0.1 - speed((0.5, 0.2)) * t
            # above both evolved pieces, below the initial datum
            assert np.all(sol.values[:, :, n] >= np.maximum(a, b) - sol.eps)
            assert np.all(sol.values[:, :, n] <= SHOCK(X1, X2) + sol.eps)

    def test_slope_class(self, sols):
        for sol in sols.values():
            assert slope_class_check(sol, 4).ok


class TestSolverContract:
    def test_cfl(self):
        f = MacroProfile.linear((0.2, 0.2), 4)
        with pytest.raises(ValueError, match="CFL"):
            solve(f, 1.0, DOM, 1 / 16, dt=0.1)

    def test_dt_divides_horizon(self):
        sol = solve(MacroProfile.linear((0.2, 0.2), 4), 0.7, DOM, 1 / 16)
        n = 0.7 / sol.dt
        assert abs(n - round(n)) < 1e-9

    def test_domain_multiple_of_dx(self):
        with pytest.raises(ValueError):
            solve(SHOCK, 0.5, ((0, 0.3), (0, 1)), 1 / 8)

    def test_profile_outside_class(self):
        with pytest.raises(ValueError):
            solve(MacroProfile.linear((0.5, 0.45), 4), 0.5, DOM, 1 / 16)

    def test_zero_horizon(self):
        sol = solve(SHOCK, 0.0, DOM, 1 / 16)
        X1, X2 = np.meshgrid(sol.x1, sol.x2, indexing="ij")
        assert np.allclose(sol.values[:, :, -1], SHOCK(X1, X2))

    def test_interpolation_reads_grid_points(self):
        sol = solve(SHOCK, 0.25, DOM, 1 / 16, times=[0.25])
        assert sol.at(sol.x1[3], sol.x2[5], 0.25) == sol.values[3, 5, 0]
        with pytest.raises(ValueError):
            sol.at(2.0, 0.0, 0.25)
        with pytest.raises(ValueError):
            sol.at(0.0, 0.0, 0.1)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-3, 3), st.integers(0, 2**31))
    def test_update_is_shift_equivariant_and_monotone(self, c, seed):
        rng = np.random.default_rng(seed)
        n = 12
        dx = 1 / 16
        # monotone admissible-slope data on a small grid
        u = np.cumsum(np.cumsum(rng.uniform(0, 0.3 * dx, (n, n)), axis=0), axis=1)
        bump = rng.uniform(0, 0.3 * dx, (n, n))
        sig = (4.0, 4.0)
        dt = dx / (2 * sum(sig))
        a = lf_update(u, dt, dx, sig, 4)
        assert np.allclose(lf_update(u + c, dt, dx, sig, 4), a + c, atol=1e-12)
        # ghost cells extrapolate linearly, so compare away from the border
        b = lf_update(np.maximum(u, u + bump - 0.15 * dx), dt, dx, sig, 4)
        assert np.all(b[2:-2, 2:-2] >= a[2:-2, 2:-2] - 1e-12)

    def test_tolerance(self):
        assert scheme_tolerance(0.1, 0.01) == pytest.approx(2 * (0.1 + 0.01))


class TestComparison:
    def test_equal(self):
        v = comparison_check(SHOCK, SHOCK, 0.5, DOM, 1 / 16)
        assert v.ok and v.worst == 0.0

    def test_shift(self):
        a = solve(SHOCK, 0.5, DOM, 1 / 16)
        b = solve(SHOCK.shifted(0.3), 0.5, DOM, 1 / 16)
        assert np.abs(b.values - a.values - 0.3).max() < 1e-12

    @settings(max_examples=8, deadline=None)
    @given(st.integers(0, 2**31))
    def test_random_ordered_pairs(self, seed):
        rng = np.random.default_rng(seed)

        def piece():
            while True:
                a, b = rng.uniform(0, 0.75, 2)
                if a + b <= 0.75:
                    return (a, b, rng.uniform(-0.2, 0.2))

        pieces = [piece() for _ in range(2)]
        f = MacroProfile.piecewise(pieces, 4, "max")
        g = MacroProfile.piecewise(pieces + [piece()], 4, "max")
        v = comparison_check(f, g, 0.5, DOM, 1 / 16)
        assert v.ok

    def test_reversed_order_detected(self):
        v = comparison_check(SHOCK.shifted(0.2), SHOCK, 0.5, DOM, 1 / 16)
        assert not v.ok and v.worst == pytest.approx(0.2)


class TestSlopeClass:
    def test_linear_constant_slopes(self):
        sol = solve(MacroProfile.linear((0.2, 0.3), 4), 0.5, DOM, 1 / 16)
        assert slope_class_check(sol).ok
        d1 = np.diff(sol.values, axis=0) / sol.dx
        assert np.allclose(d1, 0.2)

    def test_corrupted_cell(self):
        sol = solve(MacroProfile.linear((0.2, 0.3), 4), 0.5, DOM, 1 / 16)
        vals = sol.values.copy()
        vals[7, 9, 1] += 0.5
        bad = GridSolution(sol.dx, sol.dt, sol.origin, vals, sol.times, sol.M)
        v = slope_class_check(bad)
        assert not v.ok
        # the offending difference touches cell (7, 9)
        assert abs(v.location[0] - sol.x1[7]) <= sol.dx + 1e-12
        assert abs(v.location[1] - sol.x2[9]) <= sol.dx + 1e-12


class TestProbe:
    def test_linear_exact(self):
        rho = (0.2, 0.3)
        sol = solve(MacroProfile.linear(rho, 4), 0.5, DOM, 1 / 16, times=np.linspace(0, 0.5, 6))
        bumps = [QuadraticBump((0.0, 0.0), 0.3, rho, -speed(rho), 0.0, side) for side in ("above", "below")]
        rep = viscosity_inequality_probe(sol, bumps)
        assert rep.ok and np.allclose(rep.residuals, 0.0, atol=1e-12)

    def test_smooth_region_bumps(self):
        sol = solve(SHOCK, 1.0, DOM, 1 / 32, times=np.linspace(0, 1, 11))
        rep = viscosity_inequality_probe(sol, default_bumps(sol, 40, seed=3))
        assert len(rep.residuals) > 10
        assert rep.ok

    def test_guard_skips(self):
        sol = solve(MacroProfile.linear((0.2, 0.3), 4), 0.5, DOM, 1 / 16, times=np.linspace(0, 0.5, 6))
        b = QuadraticBump((0.0, 0.0), 0.3, (0.9, 0.9), 0.0, 0.0, "above")
        rep = viscosity_inequality_probe(sol, [b])
        assert rep.skipped_guard + rep.no_touch == 1 and len(rep.residuals) == 0
