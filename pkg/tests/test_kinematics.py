import math

import numpy as np
import pytest

from stochmech.core import Grid, Grid2D, GridField, coordinate_field, params_from_beta, params_from_nu, params_from_z
from stochmech.equivalence import second_order
from stochmech.kinematics import (
    DriftPair,
    accelerations_from_drifts,
    FieldHistory,
    apply_D,
    apply_Dstar,
    check_curl_2d,
    check_dynamics,
    force_scale,
    make_drifts,
    make_drifts_2d,
    mean_acceleration,
    osmotic_acceleration,
    osmotic_acceleration_gradient,
    osmotic_spread,
    product_state_2d,
)
from stochmech.core import gradient
from stochmech.states import CATALOG_NAMES, catalog, free_gaussian

from conftest import BETA_LADDER, NU_SWEEP

STATES = [("ho_ground", 0.0), ("ho_coherent", 0.0), ("ho_coherent", math.pi / 4), ("ho_coherent", math.pi / 2), ("free_gaussian", 0.0), ("free_gaussian", 0.5)]


def _setup(name, t, n=201):
    e = catalog(name)
    g = e.grid(n, 1.0)
    return e, g, e(g, t), e.V(g)


class TestDrifts:
    @pytest.mark.parametrize("name,t", STATES)
    def test_invariants(self, name, t, nu_params):
        _, g, s, _ = _setup(name, t)
        d = make_drifts(s, nu_params)
        dR = gradient(s.R).values
        assert np.max(np.abs(d.osmotic.values - 2 * nu_params.nu * dR)) <= 1e-12
        current = d.b.values - 2 * nu_params.nu * dR
        assert np.max(np.abs(current - gradient(s.S).values)) <= 1e-12  # hbar = m = 1

    def test_ground_state_closed_form(self, nu_params):
        _, g, s, _ = _setup("ho_ground", 0.0)
        d = make_drifts(s, nu_params)
        z = nu_params.z
        assert np.allclose(d.b.values, -z * g.x, atol=1e-12)
        assert np.allclose(d.b_star.values, z * g.x, atol=1e-12)

    def test_free_center_drift(self, nu_params):
        s = free_gaussian(0.0, 1.3, 1.0, Grid(-8, 8, 401))
        d = make_drifts(s, nu_params)
        assert d.b.values[200] == pytest.approx(1.3, abs=1e-12)

    def test_linear_in_nu(self):
        _, g, s, _ = _setup("ho_coherent", 0.7)
        a, b = make_drifts(s, params_from_nu(0.25)), make_drifts(s, params_from_nu(2.0))
        expect = 2 * (0.25 - 2.0) * gradient(s.R).values
        assert np.max(np.abs((a.b - b.b).values - expect)) <= 1e-12


class TestOperators:
    def test_coordinate_stationary(self, nu_params):
        _, g, s, _ = _setup("ho_ground", 0.0)
        d = make_drifts(s, nu_params)
        x = coordinate_field(g)
        assert np.allclose(apply_D(x, d, f_t=0.0).values, d.b.values, atol=1e-12)
        assert np.allclose(apply_Dstar(x, d, f_t=0.0).values, d.b_star.values, atol=1e-12)
        total = apply_D(x, d, f_t=0.0) + apply_Dstar(x, d, f_t=0.0)
        assert np.allclose(total.values, 0.0, atol=1e-12)  # no current in the ground state

    def test_constant_field(self, unscaled):
        _, g, s, _ = _setup("ho_coherent", 0.3)
        d = make_drifts(s, unscaled)
        c = GridField(g, np.full(g.n, 2.5))
        assert np.allclose(apply_D(c, d, f_t=0.0).values, 0.0, atol=1e-12)
        assert np.allclose(apply_Dstar([c, c, c], d, dt=0.1).values, 0.0, atol=1e-12)

    def test_rejects_short_history(self, unscaled):
        _, g, s, _ = _setup("ho_ground", 0.0)
        d = make_drifts(s, unscaled)
        x = coordinate_field(g)
        with pytest.raises(ValueError):
            apply_D([x, x], d, dt=0.1)
        with pytest.raises(ValueError):
            apply_D(x, d)
        with pytest.raises(ValueError):
            FieldHistory((s, s), 0.1)

    def test_DDstar_ground_z2(self):
        _, g, s, _ = _setup("ho_ground", 0.0)
        p = params_from_z(2.0)
        d = make_drifts(s, p)
        Dsx = apply_Dstar(coordinate_field(g), d, f_t=0.0)
        DDs = apply_D(Dsx, d, f_t=0.0)
        assert np.allclose(DDs.values[1:-1], -4.0 * g.x[1:-1], atol=1e-10)


class TestAccelerations:
    def test_unscaled_case(self, unscaled):
        _, g, s, _ = _setup("ho_ground", 0.0)
        acc = mean_acceleration(FieldHistory.analytic(s), unscaled)
        assert np.allclose(acc.values[1:-1], -g.x[1:-1], atol=1e-10)

    @pytest.mark.parametrize("beta", BETA_LADDER)
    def test_ground_closed_form(self, beta):
        g = Grid(-6, 6, 41)  # linear drifts are differenced exactly; a coarse grid keeps round-off small
        p = params_from_beta(beta)
        x = g.x
        drifts = DriftPair(GridField(g, -p.z * x), GridField(g, p.z * x), p)
        mean, osm = accelerations_from_drifts(drifts)
        assert np.max(np.abs(mean.values + p.z**2 * x)[1:-1]) <= 1e-10
        # -z^2 x (1 - beta/2) collapses to -x for every beta
        assert np.max(np.abs((mean + osm).values + x)[1:-1]) <= 1e-10

    @pytest.mark.parametrize("beta", BETA_LADDER)
    def test_grid_drifts_match_closed_form(self, beta):
        _, g, s, _ = _setup("ho_ground", 0.0)
        p = params_from_beta(beta)
        acc = mean_acceleration(FieldHistory.analytic(s), p).values[1:-1]
        assert np.max(np.abs(acc + p.z**2 * g.x[1:-1])) <= 5 * g.h**2

    def test_z2_osmotic_both_routes(self):
        _, g, s, _ = _setup("ho_ground", 0.0)
        p = params_from_z(2.0)
        op = osmotic_acceleration(FieldHistory.analytic(s), p).values[1:-1]
        gr = osmotic_acceleration_gradient(s, p, route="identity").values[1:-1]
        assert np.allclose(op, 3.0 * g.x[1:-1], atol=1e-10)
        assert np.allclose(gr, 3.0 * g.x[1:-1], atol=1e-10)

    def test_beta_zero_vanishes(self, unscaled):
        _, _, s, _ = _setup("ho_coherent", 0.4)
        assert np.all(osmotic_acceleration(FieldHistory.analytic(s), unscaled).values == 0.0)

    def test_free_center_at_rest(self, unscaled):
        s = free_gaussian(0.0, 0.0, 3.0, Grid(-30, 30, 401))
        acc = mean_acceleration(FieldHistory.analytic(s), unscaled)
        assert abs(acc.values[200]) < 1e-10

    @pytest.mark.parametrize("beta", BETA_LADDER)
    @pytest.mark.parametrize("name,t", STATES)
    def test_osmotic_routes_second_order(self, name, t, beta):
        gaps = []
        for n in (201, 401):
            _, g, s, _ = _setup(name, t, n)
            p = params_from_beta(beta)
            a = osmotic_acceleration(FieldHistory.analytic(s), p).values
            b = osmotic_acceleration_gradient(s, p).values
            gaps.append(np.max(np.abs(a - b)[2:-2]))
        assert second_order(*gaps)


class TestDynamics:
    @pytest.mark.parametrize("beta", BETA_LADDER)
    @pytest.mark.parametrize("name,t", STATES)
    def test_analytic_history(self, name, t, beta):
        _, g, s, V = _setup(name, t)
        rep = check_dynamics(FieldHistory.analytic(s), params_from_beta(beta), V)
        assert rep.max_abs_real <= 5 * g.h**2 * force_scale(V)
        assert rep.max_abs_imag == 0.0

    @pytest.mark.parametrize("t", [0.0, math.pi / 4, math.pi / 2])
    def test_sampled_history_time_error(self, t):
        e = catalog("ho_coherent")
        g = e.grid(201, 2.0)
        p = params_from_beta(1.5)
        errs = [check_dynamics(FieldHistory.sampled(e, g, t, dt), p, e.V(g)).max_abs_real for dt in (0.02, 0.01)]
        assert second_order(*errs, floor=1e-8)  # the dt error vanishes by symmetry at t = pi/2
        assert errs[1] < 1e-3

    def test_same_data_every_beta(self):
        # non-uniqueness: one state satisfies the law for all beta at once
        _, g, s, V = _setup("free_gaussian", 0.5)
        h = FieldHistory.analytic(s)
        reps = [check_dynamics(h, params_from_beta(b), V).max_abs_real for b in (-5.0, -2.0, 0.0, 1.0, 1.5, 1.9)]
        assert max(reps) <= 5 * g.h**2

    def test_force_scale_flat(self):
        g = Grid(-1, 1, 11)
        assert force_scale(GridField(g, np.zeros(11))) == 1.0


def test_small_nu_limit_linear_in_nu():
    _, _, s, _ = _setup("ho_coherent", 0.3)
    nus = [1e-3, 1e-2, 1e-1, 1.0]
    spreads = [osmotic_spread(s, params_from_nu(nu)) for nu in nus]
    ratios = [a / nu for a, nu in zip(spreads, nus)]
    assert np.allclose(ratios, ratios[0], rtol=1e-12)
    assert spreads[0] == pytest.approx(4e-3 * np.max(np.abs(gradient(s.R).values)), rel=1e-12)


class TestCurl:
    g2 = Grid2D(Grid(-2, 2, 81), Grid(-2, 2, 81))

    def test_gradient_field(self):
        X, Y = self.g2.mesh()
        assert check_curl_2d(GridField(self.g2, 2 * X), GridField(self.g2, 2 * Y)) <= 1e-12

    def test_rotation_detected(self):
        X, Y = self.g2.mesh()
        assert check_curl_2d(GridField(self.g2, -Y), GridField(self.g2, X)) == pytest.approx(2.0)

    def test_shape_mismatch(self):
        other = Grid2D(Grid(-2, 2, 41), Grid(-2, 2, 41))
        with pytest.raises(ValueError):
            check_curl_2d(GridField(self.g2, np.zeros(self.g2.shape)), GridField(other, np.zeros(other.shape)))

    def test_product_state(self):
        sx = catalog("ho_coherent")(Grid(-7, 7, 141), 0.6)
        sy = catalog("ho_ground")(Grid(-6, 6, 121), 0.0)
        R, S = product_state_2d(sx, sy)
        bx, by, bsx, bsy = make_drifts_2d(R, S, params_from_beta(1.0))
        assert check_curl_2d(bx + bsx, by + bsy) <= 1e-10
        assert check_curl_2d(bx, by) <= 1e-10

    def test_non_gradient_convergence(self):
        vals = []
        for n in (41, 81):
            g = Grid2D(Grid(-1, 1, n), Grid(-1, 1, n))
            X, Y = g.mesh()
            f = np.sin(X) * np.cos(2 * Y)
            vals.append(check_curl_2d(GridField(g, np.cos(X) * np.cos(2 * Y)), GridField(g, -2 * np.sin(X) * np.sin(2 * Y))))
        assert vals[0] / vals[1] == pytest.approx(4.0, rel=0.25)
