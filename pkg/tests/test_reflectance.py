"""Forward brightness models and their degenerations."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shade2print.reflectance import (
    LightSetup, Model, ReflectanceParams, brightness, oren_nayar_ab,
)

VERTICAL = LightSetup((0.0, 0.0, 1.0))


def unit_vector(seed_floats, upper_only=False):
    v = np.array(seed_floats)
    n = np.linalg.norm(v)
    if n < 1e-6:
        v = np.array([0.0, 0.0, 1.0])
        n = 1.0
    v = v / n
    if upper_only and v[2] <= 0:
        v[2] = abs(v[2]) + 1e-3
        v = v / np.linalg.norm(v)
    return v


coords = st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))


class TestSetupValidation:
    def test_light_below_surface_rejected(self):
        with pytest.raises(ValueError):
            LightSetup((0.0, 0.0, -1.0))

    def test_non_unit_rejected(self):
        with pytest.raises(ValueError):
            LightSetup((0.0, 0.0, 2.0))

    def test_weight_budget(self):
        with pytest.raises(ValueError):
            ReflectanceParams(k_A=0.5, k_D=0.5, k_S=0.5)

    def test_non_unit_normal_rejected(self):
        with pytest.raises(ValueError):
            brightness((0, 0, 2), ReflectanceParams(), VERTICAL)


class TestLambertian:
    def test_aligned(self):
        assert brightness((0, 0, 1), ReflectanceParams(), VERTICAL) == 1.0

    def test_orthogonal_clamped(self):
        light = LightSetup((1.0, 0.0, 1e-9))
        assert brightness((0, 0, 1), ReflectanceParams(), light) \
            == pytest.approx(0.0, abs=1e-8)

    def test_albedo_scales(self):
        p = ReflectanceParams(gamma_D=0.25)
        assert brightness((0, 0, 1), p, VERTICAL) == pytest.approx(0.25)


class TestOrenNayar:
    def test_constants_sigma_zero(self):
        assert oren_nayar_ab(0.0) == (1.0, 0.0)

    def test_constants_sigma_02(self):
        A, B = oren_nayar_ab(0.2)
        assert A == pytest.approx(0.945946, abs=1e-6)
        assert B == pytest.approx(0.138462, abs=1e-6)

    @given(coords, coords, coords)
    @settings(max_examples=100, deadline=None)
    def test_sigma_zero_is_lambertian(self, n, l, v):
        N = unit_vector(n)
        light = LightSetup(unit_vector(l, upper_only=True),
                           unit_vector(v, upper_only=True))
        on = brightness(N, ReflectanceParams(model=Model.OREN_NAYAR,
                                             sigma=0.0), light)
        lam = brightness(N, ReflectanceParams(), light)
        assert on == pytest.approx(lam, abs=1e-12)

    def test_sigma_small_close_to_lambertian(self):
        rng = np.random.default_rng(11)
        params = ReflectanceParams(model=Model.OREN_NAYAR, sigma=1e-6)
        worst = 0.0
        for _ in range(10_000):
            N = unit_vector(rng.normal(size=3))
            L = unit_vector(rng.normal(size=3), upper_only=True)
            V = unit_vector(rng.normal(size=3), upper_only=True)
            light = LightSetup(L, V)
            worst = max(worst, abs(brightness(N, params, light)
                                   - brightness(N, ReflectanceParams(), light)))
        assert worst < 1e-9

    def test_vertical_light_round_trip_form(self):
        # with L = V vertical the model reduces to
        # c (A + B sin(acos c) tan(acos c)) = A c + B (1 - c^2)
        A, B = oren_nayar_ab(0.3)
        params = ReflectanceParams(model=Model.OREN_NAYAR, sigma=0.3)
        for c in (0.2, 0.5, 0.9, 1.0):
            N = np.array([math.sqrt(1 - c * c), 0.0, c])
            got = brightness(N, params, VERTICAL)
            assert got == pytest.approx(min(A * c + B * (1 - c * c), 1.0),
                                        abs=1e-12)


class TestPhongFamily:
    def test_weight_degeneration_is_lambertian(self):
        p = ReflectanceParams(model=Model.PHONG, k_A=0.0, k_D=1.0, k_S=0.0,
                              alpha_exp=7.0)
        rng = np.random.default_rng(5)
        for _ in range(100):
            N = unit_vector(rng.normal(size=3))
            L = unit_vector(rng.normal(size=3), upper_only=True)
            light = LightSetup(L)
            assert brightness(N, p, light) == pytest.approx(
                brightness(N, ReflectanceParams(), light), abs=1e-15)

    def test_normal_incidence_components(self):
        p = ReflectanceParams(model=Model.PHONG, k_A=0.2, k_D=0.5, k_S=0.3,
                              gamma_D=0.8, gamma_S=0.9, I_A=0.6, alpha_exp=4.0)
        got = brightness((0, 0, 1), p, VERTICAL)
        assert got == pytest.approx(0.2 * 0.6 + 0.5 * 0.8 + 0.3 * 0.9)

    def test_blinn_matches_phong_at_normal_incidence(self):
        kw = dict(k_A=0.1, k_D=0.6, k_S=0.3, gamma_D=0.7, gamma_S=0.8,
                  I_A=0.5)
        ph = ReflectanceParams(model=Model.PHONG, alpha_exp=3.0, **kw)
        bp = ReflectanceParams(model=Model.BLINN_PHONG, c_shine=3.0, **kw)
        assert brightness((0, 0, 1), ph, VERTICAL) == pytest.approx(
            brightness((0, 0, 1), bp, VERTICAL), abs=1e-12)

    def test_specular_lobe_decays_off_axis(self):
        p = ReflectanceParams(model=Model.PHONG, k_D=0.0, k_S=1.0,
                              alpha_exp=16.0)
        on_axis = brightness((0, 0, 1), p, VERTICAL)
        tilted = brightness(unit_vector((0.4, 0, 1)), p, VERTICAL)
        assert on_axis == pytest.approx(1.0)
        assert tilted < on_axis


class TestRangeAndMonotonicity:
    @given(coords, coords, st.sampled_from(list(Model)))
    @settings(max_examples=150, deadline=None)
    def test_output_in_unit_interval(self, n, l, model):
        N = unit_vector(n)
        light = LightSetup(unit_vector(l, upper_only=True))
        p = ReflectanceParams(model=model, sigma=0.4, alpha_exp=3.0,
                              c_shine=5.0, k_A=0.1, k_D=0.6, k_S=0.3,
                              I_A=0.5)
        val = brightness(N, p, light)
        assert 0.0 <= val <= 1.0

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    @settings(max_examples=60, deadline=None)
    def test_monotone_in_albedo(self, g1, g2):
        lo, hi = sorted((g1, g2))
        N = unit_vector((0.3, -0.2, 0.9))
        a = brightness(N, ReflectanceParams(gamma_D=lo), VERTICAL)
        b = brightness(N, ReflectanceParams(gamma_D=hi), VERTICAL)
        assert b >= a - 1e-15
