"""Level-set evolution, stationary eikonal solvers, geometry queries and
reinitialization."""

import math

import numpy as np
import pytest

from shade2print.field import Grid2D, Grid3D, ScalarField2D, ScalarField3D
from shade2print.levelset import (
    AdvectiveLaw, AnisotropicSpeedLaw, CFLError, LevelSetState,
    NormalSpeedLaw, curvature_field, eikonal_residual, evolve, normal_field,
    normal_and_curvature, reinitialize, solve_anisotropic_eikonal,
    solve_stationary_eikonal,
)


def grid2(n, lo=0.0, hi=1.0):
    return Grid2D((lo, lo), ((hi - lo) / (n - 1),) * 2, (n, n))


def grid3(n, lo=-1.5, hi=1.5):
    return Grid3D((lo,) * 3, ((hi - lo) / (n - 1),) * 3, (n, n, n))


def sphere_state(n, r0=0.5):
    g = grid3(n)
    X, Y, Z = g.meshgrid()
    phi = np.sqrt(X * X + Y * Y + Z * Z) - r0
    return LevelSetState(ScalarField3D(g, phi))


class TestEvolve:
    def test_zero_speed_identity(self):
        state = sphere_state(25)
        out = evolve(state, NormalSpeedLaw(lambda t, c: 0.0), dt=0.01,
                     steps=10)
        assert np.array_equal(out.field.values, state.field.values)
        assert out.t == pytest.approx(0.1)

    def test_sphere_unit_growth(self):
        # signed distance stays a signed distance under unit normal
        # speed: after t = 0.5 the zero level sits at radius 1.0
        n = 61
        state = sphere_state(n)
        h = state.field.grid.spacing[0]
        dt = 0.5 * h
        out = evolve(state, NormalSpeedLaw(lambda t, c: 1.0), dt=dt,
                     steps=int(round(0.5 / dt)))
        X, Y, Z = state.field.grid.meshgrid()
        r = np.sqrt(X * X + Y * Y + Z * Z)
        band = np.abs(r - 1.0) < 0.3
        err = np.abs(out.field.values - (r - 1.0))[band]
        assert err.max() <= 2 * h

    def test_advection_translates_linear_profile(self):
        n = 41
        g = grid2(n)
        X, _ = g.meshgrid()
        state = LevelSetState(ScalarField2D(g, X.copy()))
        h = g.spacing[0]
        out = evolve(state, AdvectiveLaw(lambda t, c: (1.0, 0.0)),
                     dt=0.5 * h, steps=8)
        # upwind is exact on linear data; the inflow boundary error
        # propagates inward one cell per step
        np.testing.assert_allclose(out.field.values[8:, :],
                                   X[8:, :] - 4 * h, atol=1e-12)

    def test_cfl_violation_raises(self):
        state = sphere_state(25)
        h = state.field.grid.spacing[0]
        with pytest.raises(CFLError):
            evolve(state, NormalSpeedLaw(lambda t, c: 1.0), dt=h, steps=1)

    def test_anisotropic_law_directional(self):
        # speed nonzero only for downward-facing normals: the top of the
        # sphere must not move
        state = sphere_state(41)
        h = state.field.grid.spacing[0]

        def speed(t, coords, n):
            return np.where(n[..., 2] < 0.0, 1.0, 0.0)

        out = evolve(state, AnisotropicSpeedLaw(speed), dt=0.5 * h, steps=4)
        top = state.field.values[:, :, -8:]
        np.testing.assert_allclose(out.field.values[:, :, -8:], top,
                                   atol=1e-12)


class TestGeometry:
    def test_plane_normal_and_curvature(self):
        g = grid3(21)
        _, _, Z = g.meshgrid()
        state = LevelSetState(ScalarField3D(g, Z.copy()))
        n, kappa = normal_and_curvature(state, (10, 10, 10))
        np.testing.assert_allclose(n, (0.0, 0.0, 1.0), atol=1e-12)
        assert kappa == pytest.approx(0.0, abs=1e-10)

    def test_degenerate_gradient_flagged(self):
        g = grid3(9)
        state = LevelSetState(ScalarField3D(g, np.zeros((9, 9, 9))))
        n, kappa = normal_and_curvature(state, (4, 4, 4))
        assert n is None and kappa is None

    def test_sphere_curvature(self):
        # mean curvature of the unit sphere is 2, sampled at h = 0.02
        n = 151
        g = grid3(n)
        X, Y, Z = g.meshgrid()
        phi = np.sqrt(X * X + Y * Y + Z * Z) - 1.0
        state = LevelSetState(ScalarField3D(g, phi))
        i = int(round((1.0 + 1.5) / g.spacing[0]))  # node at (1, 0, 0)
        mid = (n - 1) // 2
        _, kappa = normal_and_curvature(state, (i, mid, mid))
        assert kappa == pytest.approx(2.0, abs=0.1)

    def test_normals_scale_invariant(self):
        g = grid2(31)
        X, Y = g.meshgrid()
        phi = np.hypot(X - 0.4, Y - 0.6) - 0.2
        f1 = ScalarField2D(g, phi)
        f2 = ScalarField2D(g, 10.0 * phi)
        np.testing.assert_allclose(normal_field(f1), normal_field(f2),
                                   atol=1e-9)
        np.testing.assert_allclose(curvature_field(f1),
                                   curvature_field(f2), atol=1e-6)


class TestStationaryEikonal:
    def test_point_source_distance(self):
        n = 101
        g = grid2(n)
        h = g.spacing[0]
        speed = ScalarField2D(g, np.ones((n, n)))
        mid = (n - 1) // 2
        T = solve_stationary_eikonal(speed, [(mid, mid)])
        X, Y = g.meshgrid()
        d = np.hypot(X - 0.5, Y - 0.5)
        assert np.abs(T.values - d).max() <= 2 * h

    def test_double_speed_halves_exactly(self):
        n = 41
        g = grid2(n)
        T1 = solve_stationary_eikonal(
            ScalarField2D(g, np.ones((n, n))), [(0, 0)])
        T2 = solve_stationary_eikonal(
            ScalarField2D(g, np.full((n, n), 2.0)), [(0, 0)])
        assert np.array_equal(T2.values, 0.5 * T1.values)

    def test_circular_source_region(self):
        n = 101
        g = grid2(n)
        h = g.spacing[0]
        X, Y = g.meshgrid()
        r = np.hypot(X - 0.5, Y - 0.5)
        T = solve_stationary_eikonal(
            ScalarField2D(g, np.ones((n, n))), r >= 0.4)
        mid = (n - 1) // 2
        assert T.values[mid, mid] == pytest.approx(0.4, abs=2 * h)

    def test_residual_small(self):
        n = 81
        g = grid2(n)
        speed = ScalarField2D(g, np.ones((n, n)))
        T = solve_stationary_eikonal(speed, [(0, 0)])
        assert eikonal_residual(T, speed) <= 1e-6

    def test_nonpositive_speed_rejected(self):
        n = 9
        g = grid2(n)
        with pytest.raises(ValueError):
            solve_stationary_eikonal(
                ScalarField2D(g, np.zeros((n, n))), [(0, 0)])

    def test_empty_sources_rejected(self):
        n = 9
        g = grid2(n)
        with pytest.raises(ValueError):
            solve_stationary_eikonal(
                ScalarField2D(g, np.ones((n, n))),
                np.zeros((n, n), bool))

    def test_edge_cost_matches_nodal_slowness(self):
        n = 33
        g = grid2(n)
        h = g.spacing[0]
        speed = ScalarField2D(g, np.ones((n, n)))
        T1 = solve_stationary_eikonal(speed, [(0, 0)])
        cx = np.full((n - 1, n), h)
        cy = np.full((n, n - 1), h)
        T2 = solve_stationary_eikonal(speed, [(0, 0)], edge_cost=(cx, cy))
        np.testing.assert_allclose(T1.values, T2.values, atol=1e-12)

    def test_anisotropic_reduces_to_isotropic(self):
        n = 41
        g = grid2(n)
        T_iso = solve_stationary_eikonal(
            ScalarField2D(g, np.full((n, n), 2.0)), [(0, 0)])
        T, converged = solve_anisotropic_eikonal(
            g, lambda normals: 2.0, [(0, 0)])
        assert converged
        np.testing.assert_allclose(T.values, T_iso.values, atol=1e-9)


class TestReinitialize:
    def test_recovers_distance_from_scaled_field(self):
        n = 101
        g = grid2(n)
        h = g.spacing[0]
        X, Y = g.meshgrid()
        r = np.hypot(X - 0.5, Y - 0.5)
        state = LevelSetState(ScalarField2D(g, 10.0 * (r - 0.25)))
        out = reinitialize(state)
        band = np.abs(r - 0.25) < 0.2
        assert np.abs(out.field.values - (r - 0.25))[band].max() <= 2 * h

    def test_idempotent_to_grid_accuracy(self):
        n = 81
        g = grid2(n)
        h = g.spacing[0]
        X, Y = g.meshgrid()
        phi = 5.0 * (np.hypot(X - 0.5, Y - 0.5) - 0.3)
        once = reinitialize(LevelSetState(ScalarField2D(g, phi)))
        twice = reinitialize(once)
        assert np.abs(twice.field.values - once.field.values).max() <= h

    def test_sign_pattern_preserved(self):
        n = 61
        g = grid2(n)
        X, Y = g.meshgrid()
        phi = np.hypot(X - 0.5, Y - 0.5) - 0.3
        out = reinitialize(LevelSetState(ScalarField2D(g, phi)))
        assert np.array_equal(out.field.values < 0, phi < 0)

    def test_no_zero_crossing_rejected(self):
        g = grid2(9)
        with pytest.raises(ValueError):
            reinitialize(LevelSetState(ScalarField2D(g, np.ones((9, 9)))))

    def test_incoherent_front_rejected(self):
        g = grid2(16)
        checker = np.indices((16, 16)).sum(axis=0) % 2 * 2.0 - 1.0
        with pytest.raises(ValueError):
            reinitialize(LevelSetState(ScalarField2D(g, checker)))
