import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochmech.core import Grid, GridField, params_from_nu, params_from_z
from stochmech.fokker_planck import (
    DensityTrack,
    SchemeError,
    default_delta_width,
    equilibrium_check,
    l1_distance,
    narrow_gaussian,
    ou_smoothed_moments,
    ou_transition_oracle,
    resample,
    solve_forward,
    summary_json,
    transition_density,
)
from stochmech.kinematics import make_drifts
from stochmech.states import catalog

from conftest import NU_SWEEP

# implicit steps beyond the explicit limit are intended here; test_cfl_warning checks the advisory itself
pytestmark = pytest.mark.filterwarnings("ignore:dt=.*explicit limit")


def _ground(n=301):
    e = catalog("ho_ground")
    g = e.grid(n)
    return e(g), g


class TestOracle:
    def test_start(self):
        assert ou_transition_oracle(2.0, 2.0, 1.3, 0.0) == (1.3, 0.0)

    def test_reference_values(self):
        m, v = ou_transition_oracle(2.0, 2.0, 1.0, 0.5)
        assert m == pytest.approx(0.36788, abs=1e-5)
        assert v == pytest.approx(0.43233, abs=1e-5)

    @pytest.mark.parametrize("nu", NU_SWEEP)
    def test_long_time_limit(self, nu):
        p = params_from_nu(nu)
        m, v = ou_transition_oracle(p.z, 2 * nu, 1.0, 200.0)
        assert abs(m) < 1e-12 and v == pytest.approx(0.5, rel=1e-12)

    @given(st.floats(0.1, 5), st.floats(0.1, 5), st.floats(-3, 3), st.floats(0, 10))
    def test_variance_bounded(self, theta, diff, y, t):
        _, v = ou_transition_oracle(theta, diff, y, t)
        assert 0.0 <= v <= diff / (2 * theta) * (1 + 1e-12)

    def test_rejects(self):
        with pytest.raises(ValueError):
            ou_transition_oracle(0.0, 1.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            ou_transition_oracle(1.0, 1.0, 0.0, -1.0)

    def test_smoothed(self):
        assert ou_smoothed_moments(1.0, 1.0, 0.0, 0.0, 0.1)[1] == pytest.approx(0.01)


class TestSolveForward:
    def test_stationary(self):
        s, g = _ground()
        p = params_from_z(2.0)
        track = solve_forward(make_drifts(s, p).b, p, s.rho(), 0.01, 5.0, record_every=50)
        assert l1_distance(track.density[-1], track.density[0], g) <= 1e-6
        assert np.all(equilibrium_check(track, s.rho()) <= 1e-6)

    def test_mass_conserved_each_step(self):
        s, g = _ground()
        p = params_from_z(2.0)
        track = solve_forward(make_drifts(s, p).b, p, narrow_gaussian(g, 1.0, 0.2), 0.005, 1.0)
        assert np.max(np.abs(track.masses() - 1.0)) <= 1e-10
        assert track.density.min() >= 0.0

    def test_ou_variance_relaxation(self):
        s, g = _ground()
        p = params_from_z(2.0)
        init = narrow_gaussian(g, 0.0, math.sqrt(0.1))
        track = solve_forward(make_drifts(s, p).b, p, init, 0.005, 1.0)
        for t in (0.1, 0.5, 1.0):
            k = int(np.argmin(np.abs(track.times - t)))
            assert track.variances()[k] == pytest.approx(0.5 + (0.1 - 0.5) * math.exp(-4 * t), abs=1e-3)

    @pytest.mark.parametrize("nu", [0.5, 2.0])
    def test_free_packet_equivariance(self, nu):
        e = catalog("free_gaussian")
        g = e.grid(801, 1.0)
        p = params_from_nu(nu)
        drift = lambda t: make_drifts(e(g, t), p).b
        track = solve_forward(drift, p, e(g, 0.0).rho(), 0.002, 1.0, record_every=100)
        assert l1_distance(track.density[-1], e(g, 1.0).rho().values, g) <= 1e-2

    def test_cfl_warning(self):
        s, g = _ground(301)
        p = params_from_nu(2.0)
        with pytest.warns(UserWarning, match="explicit limit"):
            solve_forward(make_drifts(s, p).b, p, s.rho(), 0.05, 0.1)

    def test_no_warning_at_small_dt(self):
        s, g = _ground(101)
        p = params_from_nu(0.5)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            solve_forward(make_drifts(s, p).b, p, s.rho(), 0.01, 0.1)

    def test_bad_inputs(self):
        s, g = _ground(101)
        p = params_from_nu(0.5)
        b = make_drifts(s, p).b
        with pytest.raises(ValueError):
            solve_forward(b, p, GridField(g, 2 * s.rho().values), 0.01, 0.1)
        with pytest.raises(ValueError):
            solve_forward(b, p, s.rho(), 0.03, 0.1)
        with pytest.raises(ValueError):
            solve_forward(np.zeros(5), p, s.rho(), 0.01, 0.1)

    def test_scheme_error_on_mass_loss(self):
        s, g = _ground(101)
        p = params_from_nu(0.5)
        blow = lambda t: np.full(g.n, np.nan)
        with pytest.raises((SchemeError, ValueError)):
            solve_forward(blow, p, s.rho(), 0.01, 0.05)

    def test_exported_scheme_error_type(self):
        assert issubclass(SchemeError, RuntimeError)


class TestTransition:
    @pytest.mark.parametrize("nu", NU_SWEEP)
    def test_moments_match_oracle(self, nu):
        s, g = _ground(401)
        p = params_from_nu(nu)
        eps = default_delta_width(g)
        track = transition_density(s, p, 1.0, 0.0025, 1.0)
        for t in (0.25, 0.5, 1.0):
            k = int(np.argmin(np.abs(track.times - t)))
            m, v = ou_smoothed_moments(p.z, 2 * nu, 1.0, t, eps)
            assert track.means()[k] == pytest.approx(m, abs=max(1e-3, 2 * eps**2))
            assert track.variances()[k] == pytest.approx(v, abs=1e-3)

    def test_nu_contrast_and_universal_equilibrium(self):
        s, g = _ground(401)
        tracks = {}
        for nu in (0.5, 2.0):
            p = params_from_nu(nu)
            T = 10.0 / p.z
            tracks[nu] = transition_density(s, p, 1.0, 0.005, T, record_every=10)
            assert equilibrium_check(tracks[nu], s.rho())[-1] <= 1e-3
        a, b = tracks[0.5].at(0.3), tracks[2.0].at(0.3)
        assert l1_distance(a.values, b.values, g) >= 0.1

    def test_monotone_relaxation(self):
        s, g = _ground(401)
        p = params_from_nu(1.0)
        d = equilibrium_check(transition_density(s, p, 1.0, 0.005, 5.0, record_every=4), s.rho())
        tail = d[5:]
        assert np.all(np.diff(tail) <= 1e-9)

    def test_current_rejected(self):
        e = catalog("ho_coherent")
        g = e.grid(301)
        with pytest.raises(ValueError, match="current"):
            transition_density(e(g, 1.0), params_from_nu(0.5), 1.0, 0.01, 0.1)

    def test_narrow_delta_rejected(self):
        s, g = _ground(301)
        with pytest.raises(ValueError):
            transition_density(s, params_from_nu(0.5), 1.0, 0.01, 0.1, eps=g.h)

    def test_meta(self):
        s, g = _ground(301)
        track = transition_density(s, params_from_nu(0.5), 1.0, 0.01, 0.1)
        assert track.meta["y"] == 1.0 and track.meta["eps"] == default_delta_width(g)


class TestTrackIO:
    def _track(self):
        g = Grid(-1, 1, 3)
        return DensityTrack(g, np.array([0.0, 0.5]), np.array([[0.0, 1.0, 0.0], [0.25, 0.5, 0.25]]), {"nu": 1.0, "z": 2.0, "y": 0.0})

    def test_csv(self, tmp_path):
        path = tmp_path / "t.csv"
        self._track().write_csv(path)
        lines = path.read_text().split("\n")
        assert lines[0] == "time,bin_center,density"
        assert lines[1] == "0.0,-1.0,0.0" and len(lines) == 8 and lines[-1] == ""

    def test_summary(self):
        import json

        d = json.loads(summary_json(self._track(), GridField(Grid(-1, 1, 3), np.array([0.0, 1.0, 0.0]))))
        assert set(d) == {"nu", "z", "y", "times", "mean", "var", "l1_to_rho"}
        assert d["l1_to_rho"][0] == 0.0

    def test_at_and_resample(self):
        tr = self._track()
        assert tr.at(0.5).time == 0.5
        with pytest.raises(KeyError):
            tr.at(0.3)
        assert len(resample(tr, [0.5])) == 1


@settings(max_examples=15, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(0.3, 3.0))
def test_mass_conservation_property(y, nu):
    s, g = _ground(151)
    p = params_from_nu(nu)
    track = solve_forward(make_drifts(s, p).b, p, narrow_gaussian(g, y, 0.3), 0.01, 0.2)
    assert np.max(np.abs(track.masses() - 1.0)) <= 1e-10
    assert track.density.min() >= 0.0
