import json
import math

import numpy as np
import pytest
import sympy as sy
from hypothesis import given, settings
from hypothesis import strategies as st

from pbiharmonic.constants import make_params
from pbiharmonic.discretization import (
    AxisymField,
    RadialGrid,
    RadialProfile,
    build_axisym_grid,
    build_grid,
    dilate,
    integrate,
    integrate_axisym,
    laplacian,
    laplacian_axisym,
    radial_weights,
    schwarz_rearrange,
)
from pbiharmonic.errors import AxisRegularityError, DilationClipError, GridError, TruncationError
from pbiharmonic.functionals import denominator, quotient

from conftest import bump_profile
from oracles import r, radial_laplacian, theta, zonal_laplacian


class TestGrid:
    def test_decades(self):
        # 19 nodes put every third node on a decade
        g = build_grid(1e-3, 1e3, 19)
        np.testing.assert_allclose(g.r[::3], 10.0 ** np.arange(-3, 4), rtol=1e-12)

    def test_too_few_nodes(self):
        with pytest.raises(GridError, match="at least"):
            build_grid(1e-3, 1e3, 7)

    def test_empty_range(self):
        with pytest.raises(GridError, match="empty"):
            build_grid(1, 1, 16)

    def test_spacing(self):
        assert build_grid(1e-4, 1e4, 2048).h == pytest.approx(8 * math.log(10) / 2047, rel=1e-14)

    def test_refined_halves_spacing(self):
        g = build_grid(1e-2, 1e2, 101)
        assert g.refined().h == pytest.approx(g.h / 2, rel=1e-14)
        assert g.refined().r[::2] == pytest.approx(g.r, rel=1e-13)


def _sym_eval(expr, grid_r):
    return sy.lambdify(r, expr, "numpy")(grid_r) * np.ones_like(grid_r)


class TestLaplacian:
    def test_r_squared(self):
        g = build_grid(1e-2, 1e1, 401)
        L = laplacian(RadialProfile(g, g.r ** 2), 6).values
        np.testing.assert_allclose(L[1:-1], 12.0, rtol=5e-4)

    def test_constant(self):
        g = build_grid(1e-2, 1e1, 401)
        L = laplacian(RadialProfile(g, np.full(g.M, 3.0)), 6).values
        assert np.max(np.abs(L)) < 1e-9 * np.max(np.abs(np.exp(-2 * g.s))) / g.h ** 2

    @pytest.mark.parametrize("expr_name", ["r2", "gauss"])
    def test_second_order(self, expr_name):
        expr = {"r2": r ** 2, "gauss": sy.exp(-r ** 2 / 2)}[expr_name]
        exact = radial_laplacian(expr, 6)
        if expr_name == "gauss":
            assert sy.simplify(exact - (r ** 2 - 6) * sy.exp(-r ** 2 / 2)) == 0
        f = sy.lambdify(r, expr, "numpy")
        errs = []
        for M in (201, 401, 801):
            g = build_grid(1e-2, 1e1, M)
            L = laplacian(RadialProfile(g, f(g.r) * np.ones(M)), 6).values
            errs.append(np.max(np.abs(L - _sym_eval(exact, g.r))[1:-1]))
        for a, b in zip(errs, errs[1:]):
            assert 3.5 <= a / b <= 4.5

    def test_navier_rows_zero(self):
        g = build_grid(1e-2, 1e1, 64)
        L = laplacian(RadialProfile(g, g.r ** 3), 6).values
        assert L[0] == 0.0 and L[-1] == 0.0


class TestIntegrate:
    def test_gaussian(self):
        g = build_grid(1e-4, 1e4, 2048)
        val = integrate(RadialProfile(g, np.exp(-g.r ** 2)), 0.0, 6)
        assert val == pytest.approx(math.pi ** 3, rel=1e-6)

    def test_refinement_gain(self):
        errs = []
        for M in (49, 97):
            g = build_grid(1e-4, 1e4, M)
            errs.append(abs(integrate(RadialProfile(g, np.exp(-g.r ** 2)), 0.0, 6, tail_tol=1.0)
                            - math.pi ** 3))
        assert errs[0] >= 3 * errs[1]

    def test_zero(self):
        g = build_grid(M=64)
        assert integrate(RadialProfile(g, np.zeros(64)), 0.0, 6) == 0.0

    def test_divergent_weight(self):
        g = build_grid(M=64)
        with pytest.raises(TruncationError):
            integrate(RadialProfile(g, np.ones(64)), 0.0, 6)

    def test_weighted_against_gamma_function(self):
        # int |x|^{-2} e^{-r^2} dx over R^6 = omega_5 Gamma(2) / 2
        g = build_grid(1e-4, 1e4, 2048)
        val = integrate(RadialProfile(g, np.exp(-g.r ** 2)), 2.0, 6)
        assert val == pytest.approx(math.pi ** 3 * math.gamma(2) / 2, rel=1e-8)


@pytest.fixture(scope="module")
def setup():
    g = build_grid(1e-4, 1e4, 1025)
    return g, bump_profile(g, 0.0, 1.5), make_params(6, 2, 4, -3.0)


@pytest.fixture(scope="module")
def fine():
    return build_grid(1e-4, 1e4, 8192)


class TestDilate:
    def test_identity(self, setup):
        g, u, P = setup
        assert dilate(u, 0, 6, 2) is u

    @pytest.mark.parametrize("k", [-200, -37, 1, 15, 120])
    def test_quotient_invariant(self, setup, k):
        g, u, P = setup
        a = quotient(u, P, with_residual=False).quotient_q
        b = quotient(dilate(u, k, 6, 2), P, with_residual=False).quotient_q
        assert b == pytest.approx(a, rel=1e-10)

    @pytest.mark.parametrize("k", [-90, 44])
    def test_weighted_norm_invariant(self, setup, k):
        g, u, P = setup
        assert denominator(dilate(u, k, 6, 2), P) == pytest.approx(denominator(u, P), rel=1e-10)

    @pytest.mark.parametrize("k", [-60, 73])
    def test_round_trip(self, setup, k):
        g, u, P = setup
        back = dilate(dilate(u, k, 6, 2), -k, 6, 2)
        # node positions map exactly; the amplitude factor and its inverse
        # multiply back to one within rounding
        np.testing.assert_array_equal(back.values != 0, u.values != 0)
        np.testing.assert_allclose(back.values, u.values, rtol=4e-16, atol=0)

    def test_large_shift_rejected(self, setup):
        g, u, P = setup
        with pytest.raises(DilationClipError):
            dilate(u, g.M // 4 + 1, 6, 2)

    def test_clipping_rejected(self):
        g = build_grid(1e-4, 1e4, 1025)
        u = bump_profile(g, 8.5, 1.0)
        with pytest.raises(DilationClipError, match="clips"):
            dilate(u, -100, 6, 2)


def _bump_mix(g, rng):
    t = g.s
    u = np.zeros(g.M)
    for _ in range(rng.integers(1, 4)):
        c = rng.uniform(-3, 3)
        w = rng.uniform(0.3, 1.5)
        u += rng.uniform(0.2, 1.0) * np.exp(-((t - c) / w) ** 2)
    win = np.clip(1 - (t / 6.0) ** 2, 0, None) ** 4
    u = u * win
    u[0] = u[-1] = 0.0
    return RadialProfile(g, u)


class TestRearrange:
    def test_decreasing_is_fixed(self):
        g = build_grid(1e-4, 1e4, 1025)
        u = RadialProfile(g, np.exp(-g.r ** 2))
        np.testing.assert_allclose(schwarz_rearrange(u, 6).values, u.values, rtol=0, atol=1e-12)

    def test_bump_equimeasurable(self, fine):
        u = bump_profile(fine, 1.0, 1.2)
        us = schwarz_rearrange(u, 6).values
        assert np.all(np.diff(us) <= 0)
        W = radial_weights(fine, 6)
        for p in (1.0, 2.0, 4.0):
            a = np.sum(W * u.values ** p)
            b = np.sum(W * us ** p)
            assert b == pytest.approx(a, rel=1e-6)

    def test_hardy_littlewood(self, fine, rng):
        W = radial_weights(fine, 6)
        for _ in range(10):
            u = _bump_mix(fine, rng)
            us = schwarz_rearrange(u, 6).values
            for a in (4.0, 2.0):
                before = np.sum(W * fine.r ** -a * u.values ** 2)
                after = np.sum(W * fine.r ** -a * us ** 2)
                assert after >= before * (1 - 1e-6)

    def test_idempotent(self, fine, rng):
        for _ in range(5):
            us = schwarz_rearrange(_bump_mix(fine, rng), 6)
            uss = schwarz_rearrange(us, 6)
            assert np.max(np.abs(uss.values - us.values)) <= 1e-6 * us.values.max()

    def test_absolute_value(self, fine):
        u = bump_profile(fine, 1.0, 1.2)
        np.testing.assert_array_equal(schwarz_rearrange(-u, 6).values,
                                      schwarz_rearrange(u, 6).values)

    def test_needs_decay(self):
        g = build_grid(M=64)
        with pytest.raises(TruncationError):
            schwarz_rearrange(RadialProfile(g, np.ones(64)), 6)


class TestAxisym:
    def test_radial_field_matches_radial_laplacian(self):
        ag = build_axisym_grid(1e-3, 1e3, 257, 8, 6)
        u = bump_profile(ag.radial, 0.0, 2.0)
        Lz = laplacian_axisym(AxisymField.from_radial(ag, u)).values
        Lr = laplacian(u, 6).values
        scale = np.max(np.abs(Lr))
        assert np.max(np.abs(Lz - Lr[:, None])) <= 1e-10 * scale

    def test_r2_cos_against_symbolic(self):
        N = 6
        exact = zonal_laplacian(r ** 2 * sy.cos(theta), N)
        assert sy.simplify(exact - (N + 1) * sy.cos(theta)) == 0
        f = sy.lambdify((r, theta), exact, "numpy")
        errs = []
        for M in (201, 401):
            ag = build_axisym_grid(1e-2, 1e1, M, 8, N)
            u = AxisymField.from_function(ag, lambda rr, tt: rr ** 2 * np.cos(tt))
            L = laplacian_axisym(u).values
            ref = f(ag.radial.r[:, None], ag.theta[None, :])
            errs.append(np.max(np.abs(L - ref)[1:-1]))
        assert errs[1] < 1e-2
        assert 3.5 <= errs[0] / errs[1] <= 4.5

    def test_legendre_mode_exact_angular_part(self):
        # the angular operator on cos(theta) has eigenvalue -(N-1)
        ag = build_axisym_grid(1e-2, 1e1, 64, 8, 6)
        x = ag.x
        np.testing.assert_allclose(ag.angular_matrix @ x, -5 * x, atol=1e-12)

    def test_gaussian_integral_matches_radial(self):
        ag = build_axisym_grid(1e-4, 1e4, 2048, 8, 6)
        u = AxisymField.from_function(ag, lambda rr, tt: np.exp(-rr ** 2) + 0 * tt)
        rad = integrate(RadialProfile(ag.radial, np.exp(-ag.radial.r ** 2)), 0.0, 6)
        assert integrate_axisym(u) == pytest.approx(rad, rel=1e-6)
        assert integrate_axisym(u) == pytest.approx(math.pi ** 3, rel=1e-6)

    def test_offset_gaussian(self):
        # int |x - y e1|^{-2} exp(-|x|^2) is finite and below the centred value
        ag = build_axisym_grid(1e-4, 1e4, 2048, 16, 6)
        u = AxisymField.from_function(ag, lambda rr, tt: np.exp(-rr ** 2) + 0 * tt)
        centred = integrate_axisym(u, 2.0)
        shifted = integrate_axisym(u, 2.0, offset=3.0)
        assert centred == pytest.approx(math.pi ** 3 / 2, rel=1e-6)
        assert 0 < shifted < centred

    def test_axis_kink_rejected(self):
        ag = build_axisym_grid(1e-2, 1e1, 64, 8, 6)
        with pytest.raises(AxisRegularityError):
            AxisymField.from_function(ag, lambda rr, tt: np.exp(-rr ** 2) * tt)

    def test_modes_round_trip(self, rng):
        ag = build_axisym_grid(1e-2, 1e1, 32, 12, 6)
        v = rng.standard_normal((32, 12))
        np.testing.assert_allclose(ag.from_modes(ag.to_modes(v)), v, atol=1e-12)


class TestSerialization:
    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=16, max_size=40))
    @settings(max_examples=40)
    def test_json_round_trip(self, vals):
        g = build_grid(1e-3, 1e3, len(vals))
        u = RadialProfile(g, vals)
        back = RadialProfile.from_json(u.to_json())
        assert back.grid == g
        np.testing.assert_array_equal(back.values, u.values)

    def test_text_round_trip(self, rng):
        g = build_grid(1e-3, 1e3, 50)
        u = RadialProfile(g, rng.standard_normal(50))
        back = RadialProfile.from_text(u.to_text())
        assert back.grid == g
        np.testing.assert_array_equal(back.values, u.values)

    def test_json_ignores_extra_keys(self):
        g = build_grid(1e-3, 1e3, 20)
        doc = json.loads(RadialProfile(g, np.arange(20.0)).to_json())
        doc["config"] = {"anything": 1}
        assert RadialProfile.from_json(json.dumps(doc)).grid == g

    def test_wrong_format_rejected(self):
        with pytest.raises(GridError):
            RadialProfile.from_json(json.dumps({"format": "other", "version": 1}))

    def test_axisym_round_trip(self, rng):
        ag = build_axisym_grid(1e-2, 1e2, 20, 4, 7)
        u = AxisymField(ag, rng.standard_normal((20, 4)))
        back = AxisymField.from_json(u.to_json())
        assert back.grid == ag
        np.testing.assert_array_equal(back.values, u.values)

    def test_values_immutable(self):
        g = build_grid(1e-3, 1e3, 20)
        u = RadialProfile(g, np.zeros(20))
        with pytest.raises(ValueError):
            u.values[0] = 1.0

    def test_grid_rejects_nan(self):
        with pytest.raises(GridError):
            RadialGrid(float("nan"), 1.0, 20)
