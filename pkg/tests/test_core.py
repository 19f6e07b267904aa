import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochmech.core import (
    Grid,
    Grid2D,
    GridField,
    ModelParams,
    ParameterError,
    gradient,
    laplacian,
    params_from_beta,
    params_from_nu,
    params_from_z,
)


class TestParams:
    def test_unscaled_case(self):
        p = params_from_beta(0.0)
        assert p.z == 1.0
        assert p.nu == 0.5

    def test_beta_three_halves(self):
        p = params_from_beta(1.5)
        assert p.z == pytest.approx(2.0, rel=1e-15)
        assert p.nu == pytest.approx(1.0, rel=1e-15)

    def test_negative_beta(self):
        p = params_from_beta(-2.0)
        assert p.z == pytest.approx(0.70710678, abs=1e-8)
        assert p.nu == pytest.approx(0.35355339, abs=1e-8)

    @pytest.mark.parametrize("beta", [2.0, 2.5, math.inf])
    def test_beta_pole_rejected(self, beta):
        with pytest.raises(ParameterError):
            params_from_beta(beta)

    def test_from_nu(self):
        p = params_from_nu(0.5)
        assert (p.z, p.beta) == (1.0, 0.0)
        q = params_from_nu(1.0)
        assert q.z == 2.0
        assert q.beta == pytest.approx(1.5, rel=1e-15)

    @pytest.mark.parametrize("nu", [0.0, -1.0])
    def test_nonpositive_nu_rejected(self, nu):
        with pytest.raises(ParameterError):
            params_from_nu(nu)

    def test_z_must_be_positive(self):
        with pytest.raises(ParameterError):
            params_from_z(-1.0)

    @pytest.mark.parametrize("beta", [-2.0, 0.0, 1.0, 1.9])
    def test_round_trip(self, beta):
        a = params_from_beta(beta)
        b = params_from_nu(a.nu)
        for name in ("nu", "beta", "z"):
            assert getattr(b, name) == pytest.approx(getattr(a, name), rel=1e-12, abs=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(
        beta=st.floats(min_value=-1e4, max_value=1.999),
        hbar=st.floats(min_value=0.1, max_value=10),
        mass=st.floats(min_value=0.1, max_value=10),
    )
    def test_round_trip_property(self, beta, hbar, mass):
        a = params_from_beta(beta, hbar, mass)
        b = params_from_nu(a.nu, hbar, mass)
        assert b.z == pytest.approx(a.z, rel=1e-12)
        assert b.nu == pytest.approx(a.nu, rel=1e-12)
        assert b.beta == pytest.approx(a.beta, rel=1e-12, abs=1e-12)

    def test_inconsistent_triple_rejected(self):
        with pytest.raises(ParameterError):
            ModelParams(hbar=1.0, mass=1.0, nu=0.5, beta=1.0, z=1.0)

    def test_nu_monotone_in_beta(self):
        betas = [-1e6, -100.0, -2.0, -0.5, 0.0, 0.5, 1.0, 1.5, 1.9, 1.999, 1.999999]
        nus = [params_from_beta(b).nu for b in betas]
        assert all(a < b for a, b in zip(nus, nus[1:]))
        assert nus[0] < 1e-3
        assert nus[-1] > 300
        assert params_from_beta(1e-9).nu == pytest.approx(0.5, rel=1e-8)


class TestGrid:
    def test_spacing(self):
        g = Grid(-1.0, 1.0, 101)
        assert g.h == pytest.approx(0.02)
        assert np.all(np.diff(g.x) > 0)
        assert np.allclose(np.diff(g.x), g.h)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            Grid(0.0, 1.0, 2)

    def test_even_point_count_allowed(self):
        assert Grid(0.0, 1.0, 10).n == 10

    def test_non_finite_values_rejected(self):
        g = Grid(0.0, 1.0, 5)
        with pytest.raises(ValueError):
            GridField(g, [0, 1, np.nan, 2, 3])

    def test_field_is_read_only(self):
        g = Grid(0.0, 1.0, 5)
        f = GridField(g, np.zeros(5))
        with pytest.raises(ValueError):
            f.values[0] = 1.0


class TestDifferences:
    def test_quadratic_exact(self):
        g = Grid(-1.0, 1.0, 101)
        f = GridField(g, g.x**2)
        assert np.max(np.abs(gradient(f).values - 2 * g.x)) < 1e-12
        assert np.max(np.abs(laplacian(f).values - 2.0)) < 1e-9

    def test_constant(self):
        g = Grid(-3.0, 2.0, 17)
        f = GridField(g, np.full(17, 4.2))
        assert np.max(np.abs(gradient(f).values)) < 1e-13
        assert np.max(np.abs(laplacian(f).values)) < 1e-11

    def test_three_point_grid(self):
        g = Grid(0.0, 2.0, 3)
        f = GridField(g, g.x**2)
        assert np.allclose(laplacian(f).values, 2.0)
        assert np.allclose(gradient(f).values, 2 * g.x)

    @pytest.mark.parametrize("op,exact", [(gradient, np.cos), (laplacian, lambda x: -np.sin(x))])
    def test_second_order_convergence(self, op, exact):
        errs = []
        for n in (81, 161, 321, 641):
            g = Grid(0.0, 3.0, n)
            errs.append(np.max(np.abs(op(GridField(g, np.sin(g.x))).values - exact(g.x))))
        ratios = [a / b for a, b in zip(errs, errs[1:])]
        for r in ratios:
            assert r == pytest.approx(4.0, rel=0.2)

    @settings(max_examples=50, deadline=None)
    @given(
        a=st.floats(-5, 5),
        b=st.floats(-5, 5),
        coeffs=st.lists(st.floats(-3, 3), min_size=4, max_size=4),
    )
    def test_linearity(self, a, b, coeffs):
        g = Grid(-2.0, 2.0, 33)
        f = GridField(g, np.polyval(coeffs, g.x) + np.sin(g.x))
        h = GridField(g, np.exp(-g.x**2))
        for op in (gradient, laplacian):
            lhs = op(a * f + b * h).values
            rhs = a * op(f).values + b * op(h).values
            assert np.allclose(lhs, rhs, atol=1e-9 * (1 + abs(a) + abs(b)))

    def test_2d_grid_shape(self):
        g = Grid2D(Grid(0, 1, 5), Grid(0, 2, 7))
        X, Y = g.mesh()
        assert X.shape == (5, 7)
        with pytest.raises(ValueError):
            GridField(g, np.zeros((7, 5)))
