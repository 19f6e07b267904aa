"""Forward/backward drifts and the stochastic derivatives D, D*.

With diffusion constant nu the drifts of a state (R, S) are::

    b  = 2 nu grad R + (hbar/m) grad S
    b* = b - 4 nu grad R

so (b - b*)/2 is the osmotic velocity 2 nu grad R and (b + b*)/2 is the
current velocity (hbar/m) grad S, which does not depend on nu. The
derivatives act on fields as::

    D  f = d_t f + b  . grad f + nu lap f
    D* f = d_t f + b* . grad f - nu lap f

Second-order compositions such as D D* x are evaluated on grid fields.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Grid, Grid2D, GridField, ModelParams, coordinate_field, derivative, gradient, laplacian
from .equivalence import ResidualReport, quantum_potential, quantum_potential_from_density
from .states import WavePolar


@dataclass(frozen=True)
class DriftPair:
    b: GridField
    b_star: GridField
    params: ModelParams
    time: float = 0.0

    @property
    def osmotic(self) -> GridField:
        return (self.b - self.b_star) / 2.0

    @property
    def current(self) -> GridField:
        return (self.b + self.b_star) / 2.0


def make_drifts(state: WavePolar, params: ModelParams) -> DriftPair:
    """Drifts for diffusion constant ``params.nu``, with S_N = S/z as the drift potential."""
    dR = gradient(state.R)
    SN = state.S / params.z
    b = 2.0 * params.nu * dR + 2.0 * params.nu * gradient(SN)
    b_star = b - 4.0 * params.nu * dR
    return DriftPair(b, b_star, params, state.time)


def _drift_rates(state: WavePolar, params: ModelParams) -> tuple[GridField, GridField]:
    """Analytic d_t b and d_t b* from the state's d_t R and d_t S."""
    dRt = gradient(state.R_t)
    bt = 2.0 * params.nu * dRt + 2.0 * params.nu * gradient(state.S_t / params.z)
    return bt, bt - 4.0 * params.nu * dRt


def time_derivative(slices: Sequence[GridField], dt: float) -> GridField:
    """Central difference in time at the middle slice."""
    if len(slices) < 3 or len(slices) % 2 == 0:
        raise ValueError("need an odd number (>= 3) of time slices for a central difference")
    m = len(slices) // 2
    return (slices[m + 1] - slices[m - 1]) / (2.0 * dt)


def _resolve(f, f_t, dt) -> tuple[GridField, GridField]:
    if isinstance(f, GridField):
        if f_t is None:
            raise ValueError("a single slice needs its time derivative f_t")
        if not isinstance(f_t, GridField):
            f_t = f.like(np.broadcast_to(np.asarray(f_t, dtype=float), f.values.shape))
        return f, f_t
    slices = list(f)
    if dt is None:
        raise ValueError("a time series of slices needs dt")
    return slices[len(slices) // 2], time_derivative(slices, dt)


def apply_D(f, drifts: DriftPair, f_t=None, dt: float | None = None) -> GridField:
    """Forward derivative of ``f`` (one slice plus ``f_t``, or >= 3 slices plus ``dt``)."""
    f, f_t = _resolve(f, f_t, dt)
    return f_t + drifts.b * gradient(f) + drifts.params.nu * laplacian(f)


def apply_Dstar(f, drifts: DriftPair, f_t=None, dt: float | None = None) -> GridField:
    f, f_t = _resolve(f, f_t, dt)
    return f_t + drifts.b_star * gradient(f) - drifts.params.nu * laplacian(f)


@dataclass(frozen=True)
class FieldHistory:
    """States at uniform time steps; the middle slice is where operators are evaluated.

    A single state carrying analytic d_t R and d_t S is also a valid history.
    """

    states: tuple[WavePolar, ...]
    dt: float | None = None

    def __post_init__(self) -> None:
        states = tuple(self.states)
        object.__setattr__(self, "states", states)
        if not states:
            raise ValueError("empty history")
        grid = states[0].grid
        if any(s.grid != grid for s in states):
            raise ValueError("history slices must share one grid")
        if len(states) == 1:
            if not states[0].has_time_derivatives:
                raise ValueError("a one-slice history needs analytic time derivatives")
        elif len(states) < 3 or len(states) % 2 == 0 or self.dt is None:
            raise ValueError("numeric histories need an odd number (>= 3) of slices and dt")

    @classmethod
    def analytic(cls, state: WavePolar) -> FieldHistory:
        return cls((state,))

    @classmethod
    def sampled(cls, build, grid: Grid, t: float, dt: float) -> FieldHistory:
        """Three slices t-dt, t, t+dt from ``build(grid, t)`` with time derivatives dropped."""
        slices = []
        for tk in (t - dt, t, t + dt):
            s = build(grid, tk)
            slices.append(WavePolar(s.R, s.S, s.time))
        return cls(tuple(slices), dt)

    @property
    def grid(self) -> Grid:
        return self.states[0].grid

    @property
    def middle(self) -> WavePolar:
        return self.states[len(self.states) // 2]

    @property
    def analytic_rates(self) -> bool:
        return len(self.states) == 1

    def drifts(self, params: ModelParams) -> list[DriftPair]:
        return [make_drifts(s, params) for s in self.states]


def _first_derivatives(history: FieldHistory, params: ModelParams):
    """D x and D* x, with their time derivatives (analytic or central)."""
    pairs = history.drifts(params)
    mid = pairs[len(pairs) // 2]
    grid = history.grid
    if history.analytic_rates:
        x = coordinate_field(grid, mid.time)
        Dx = apply_D(x, mid, f_t=0.0)
        Dsx = apply_Dstar(x, mid, f_t=0.0)
        bt, bst = _drift_rates(history.middle, params)
        return mid, [Dx], [Dsx], bt, bst
    Dx = [apply_D(coordinate_field(grid, p.time), p, f_t=0.0) for p in pairs]
    Dsx = [apply_Dstar(coordinate_field(grid, p.time), p, f_t=0.0) for p in pairs]
    return mid, Dx, Dsx, None, None


def _D(series, drifts, rate, dt, star=False):
    op = apply_Dstar if star else apply_D
    if rate is not None:
        return op(series[0], drifts, f_t=rate)
    return op(series, drifts, dt=dt)


def mean_acceleration(history: FieldHistory, params: ModelParams) -> GridField:
    """(m/2)(D D* + D* D) x."""
    mid, Dx, Dsx, bt, bst = _first_derivatives(history, params)
    DDs = _D(Dsx, mid, bst, history.dt)
    DsD = _D(Dx, mid, bt, history.dt, star=True)
    return 0.5 * params.mass * (DDs + DsD)


def osmotic_acceleration(history: FieldHistory, params: ModelParams) -> GridField:
    """m (beta/8) (D - D*)^2 x by composing the operators."""
    mid, Dx, Dsx, bt, bst = _first_derivatives(history, params)
    g = [a - b for a, b in zip(Dx, Dsx)]
    gt = None if bt is None else bt - bst
    twice = _D(g, mid, gt, history.dt) - _D(g, mid, gt, history.dt, star=True)
    return params.mass * params.beta / 8.0 * twice


def osmotic_acceleration_gradient(state: WavePolar, params: ModelParams, route: str = "density") -> GridField:
    """grad[m beta nu^2 lap(sqrt rho)/sqrt rho], the potential form of the osmotic term."""
    if route == "density":
        Q = quantum_potential_from_density(state.rho())
    else:
        Q = quantum_potential(state.R)
    return gradient(params.mass * params.beta * params.nu**2 * Q)


def accelerations_from_drifts(
    drifts: DriftPair, b_t: GridField | float = 0.0, b_star_t: GridField | float = 0.0
) -> tuple[GridField, GridField]:
    """Mean and osmotic accelerations of x for drifts given directly (e.g. in closed form).

    Returns ((m/2)(D D* + D* D) x, m (beta/8) (D - D*)^2 x); the rates default
    to a stationary field.
    """
    p = drifts.params
    grid = drifts.b.grid
    Dx = apply_D(coordinate_field(grid, drifts.time), drifts, f_t=0.0)
    Dsx = apply_Dstar(coordinate_field(grid, drifts.time), drifts, f_t=0.0)
    mean = 0.5 * p.mass * (apply_D(Dsx, drifts, f_t=b_star_t) + apply_Dstar(Dx, drifts, f_t=b_t))
    g = Dx - Dsx
    g_t = b_t - b_star_t
    osm = p.mass * p.beta / 8.0 * (apply_D(g, drifts, f_t=g_t) - apply_Dstar(g, drifts, f_t=g_t))
    return mean, osm


def dynamics_residual(history: FieldHistory, params: ModelParams, V: GridField) -> GridField:
    """mean + osmotic acceleration + grad V; zero when the generalized law holds."""
    return mean_acceleration(history, params) + osmotic_acceleration(history, params) + gradient(V)


def check_dynamics(history: FieldHistory, params: ModelParams, V: GridField, margin: int = 1) -> ResidualReport:
    res = dynamics_residual(history, params, V).values
    grid = history.grid
    return ResidualReport.from_residuals(res, np.zeros_like(res), grid.h, grid.n, margin)


def force_scale(V: GridField, margin: int = 1) -> float:
    """max |grad V| on the interior, or 1 for a flat potential."""
    g = np.abs(gradient(V).values)
    g = g[margin:-margin] if margin else g
    s = float(g.max())
    return s if s > 0 else 1.0


def osmotic_spread(state: WavePolar, params: ModelParams) -> float:
    """max |b - b*|, which shrinks linearly as nu -> 0."""
    d = make_drifts(state, params)
    return float(np.max(np.abs((d.b - d.b_star).values)))


def _grad2(f: GridField) -> tuple[GridField, GridField]:
    if not isinstance(f.grid, Grid2D):
        raise TypeError("expected a 2-D grid field")
    return (
        f.like(derivative(f.values, f.grid.gx.h, axis=0)),
        f.like(derivative(f.values, f.grid.gy.h, axis=1)),
    )


def curl_2d(bx: GridField, by: GridField) -> GridField:
    if bx.grid != by.grid or bx.values.shape != by.values.shape:
        raise ValueError("vector components must share a grid")
    _, dbx_dy = _grad2(bx)
    dby_dx, _ = _grad2(by)
    return dby_dx - dbx_dy


def check_curl_2d(bx: GridField, by: GridField) -> float:
    """max |curl (bx, by)| over the grid."""
    return float(np.max(np.abs(curl_2d(bx, by).values)))


def product_state_2d(sx: WavePolar, sy: WavePolar) -> tuple[GridField, GridField]:
    """(R, S) of psi_x(x) psi_y(y) on the tensor grid."""
    g = Grid2D(sx.grid, sy.grid)
    R = sx.R.values[:, None] + sy.R.values[None, :]
    S = sx.S.values[:, None] + sy.S.values[None, :]
    return GridField(g, R, sx.time), GridField(g, S, sx.time)


def make_drifts_2d(R: GridField, S: GridField, params: ModelParams) -> tuple[GridField, ...]:
    """(b_x, b_y, b*_x, b*_y) for a 2-D state."""
    Rx, Ry = _grad2(R)
    Sx, Sy = _grad2(S / params.z)
    two_nu = 2.0 * params.nu
    bx, by = two_nu * (Rx + Sx), two_nu * (Ry + Sy)
    return bx, by, bx - 2.0 * two_nu * Rx, by - 2.0 * two_nu * Ry
