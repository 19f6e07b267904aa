"""Node-free wavefunctions in polar form, psi = exp(R + iS).

``R`` is the log-amplitude (so the density is exp(2R)) and ``S`` the phase in
units of hbar. Catalog states come with closed-form time derivatives so that
residual checks can avoid differencing in time.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from .core import Grid, GridField, ModelParams

NORM_TOL = 1e-6
COVERAGE_RATIO = 1e-12
DENSITY_FLOOR = 1e-14


class NodeError(ValueError):
    """The density falls below the floor somewhere, so R is unbounded."""


class GridCoverageError(ValueError):
    """The grid truncates a significant part of the state."""


@dataclass(frozen=True)
class WavePolar:
    R: GridField
    S: GridField
    time: float = 0.0
    R_t: GridField | None = None
    S_t: GridField | None = None

    def __post_init__(self) -> None:
        if self.R.grid != self.S.grid:
            raise ValueError("R and S live on different grids")

    @property
    def grid(self) -> Grid:
        return self.R.grid

    @property
    def has_time_derivatives(self) -> bool:
        return self.R_t is not None and self.S_t is not None

    def psi(self) -> np.ndarray:
        return np.exp(self.R.values + 1j * self.S.values)

    def rho(self) -> GridField:
        return self.R.like(np.exp(2.0 * self.R.values))

    def norm(self) -> float:
        return self.grid.integrate(np.exp(2.0 * self.R.values))

    def moments(self) -> tuple[float, float]:
        """Mean and variance of the position density."""
        x = self.grid.x
        rho = np.exp(2.0 * self.R.values)
        mass = self.grid.integrate(rho)
        mean = self.grid.integrate(x * rho) / mass
        var = self.grid.integrate((x - mean) ** 2 * rho) / mass
        return mean, var

    def check_normalized(self, tol: float = NORM_TOL) -> None:
        err = abs(self.norm() - 1.0)
        if err > tol:
            raise GridCoverageError(f"density integrates to 1{err:+.3e}, tolerance {tol}")

    def write_csv(self, path) -> None:
        x = self.grid.x
        rho = np.exp(2.0 * self.R.values)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "R", "S", "rho"])
            for row in zip(x, self.R.values, self.S.values, rho):
                w.writerow([repr(float(v)) for v in row])


def _polar(grid: Grid, t: float, R, S, R_t, S_t, check: bool = True) -> WavePolar:
    state = WavePolar(
        R=GridField(grid, R, t),
        S=GridField(grid, S, t),
        time=t,
        R_t=GridField(grid, R_t, t),
        S_t=GridField(grid, S_t, t),
    )
    if check:
        rho = np.exp(2.0 * state.R.values)
        edge = max(rho[0], rho[-1])
        if edge > COVERAGE_RATIO * rho.max():
            raise GridCoverageError(
                f"edge density {edge:.3e} exceeds {COVERAGE_RATIO:g} of peak {rho.max():.3e}"
            )
        state.check_normalized()
    return state


def ho_ground(omega: float, grid: Grid, t: float = 0.0, hbar: float = 1.0, mass: float = 1.0) -> WavePolar:
    """Oscillator ground state in V = m omega^2 x^2 / 2."""
    if not omega > 0:
        raise ValueError("omega must be positive")
    x = grid.x
    a = mass * omega / hbar
    R = -0.5 * a * x**2 + 0.25 * math.log(a / math.pi)
    S = np.full_like(x, -0.5 * omega * t)
    return _polar(grid, t, R, S, np.zeros_like(x), np.full_like(x, -0.5 * omega))


def ho_coherent(
    omega: float, amplitude: float, grid: Grid, t: float = 0.0, hbar: float = 1.0, mass: float = 1.0
) -> WavePolar:
    """Displaced ground state oscillating about x_c(t) = A cos(omega t)."""
    if not omega > 0:
        raise ValueError("omega must be positive")
    x = grid.x
    a = mass * omega / hbar
    xc = amplitude * math.cos(omega * t)
    pc = -mass * omega * amplitude * math.sin(omega * t)
    xc_dot = pc / mass
    pc_dot = -mass * omega**2 * xc
    R = -0.5 * a * (x - xc) ** 2 + 0.25 * math.log(a / math.pi)
    S = pc * x / hbar - 0.5 * omega * t - pc * xc / (2.0 * hbar)
    R_t = a * (x - xc) * xc_dot
    S_t = pc_dot * x / hbar - 0.5 * omega - (pc_dot * xc + pc * xc_dot) / (2.0 * hbar)
    return _polar(grid, t, R, S, R_t, S_t)


def free_gaussian(
    x0: float, p0: float, sigma0: float, grid: Grid, t: float = 0.0, hbar: float = 1.0, mass: float = 1.0
) -> WavePolar:
    """Dispersing free packet; sigma0 is the initial position standard deviation."""
    if not sigma0 > 0:
        raise ValueError("sigma0 must be positive")
    x = grid.x
    v = p0 / mass
    kappa = hbar / (2.0 * mass * sigma0**2)
    tau = kappa * t
    var_t = sigma0**2 * (1.0 + tau**2)
    dvar_t = 2.0 * sigma0**2 * tau * kappa
    xi = x - x0 - v * t
    g = tau / (4.0 * var_t)
    g_t = kappa * (1.0 - tau**2) / (4.0 * sigma0**2 * (1.0 + tau**2) ** 2)

    R = -(xi**2) / (4.0 * var_t) - 0.25 * math.log(2.0 * math.pi * var_t)
    S = p0 * (x - 0.5 * v * t) / hbar + g * xi**2 - 0.5 * math.atan(tau)
    R_t = xi * v / (2.0 * var_t) + (xi**2 / (4.0 * var_t**2) - 1.0 / (4.0 * var_t)) * dvar_t
    S_t = -p0 * v / (2.0 * hbar) + g_t * xi**2 - 2.0 * g * xi * v - 0.5 * kappa / (1.0 + tau**2)
    return _polar(grid, t, R, S, R_t, S_t)


def free_gaussian_variance(sigma0: float, t: float, hbar: float = 1.0, mass: float = 1.0) -> float:
    return sigma0**2 * (1.0 + (hbar * t / (2.0 * mass * sigma0**2)) ** 2)


@dataclass(frozen=True)
class CatalogEntry:
    """A named catalog state with its potential and recommended domain."""

    name: str
    build: Callable[[Grid, float], WavePolar]
    potential: Callable[[np.ndarray], np.ndarray]
    force_scale: float
    half_width: Callable[[float], float]
    center: Callable[[float], float]
    stationary: bool
    params: dict = field(default_factory=dict)
    hbar: float = 1.0
    mass: float = 1.0

    def __call__(self, grid: Grid, t: float = 0.0) -> WavePolar:
        return self.build(grid, t)

    def V(self, grid: Grid, t: float = 0.0) -> GridField:
        return GridField(grid, self.potential(grid.x), t)

    def grid(self, n: int = 401, t_max: float = 0.0) -> Grid:
        """A grid covering the state on [0, t_max] with edge density near 1e-13 of peak."""
        ts = np.linspace(0.0, t_max, 9) if t_max > 0 else [0.0]
        lo = min(self.center(t) for t in ts)
        hi = max(self.center(t) for t in ts)
        w = self.half_width(t_max)
        return Grid(lo - w, hi + w, n)


# ln(1e13): puts the catalog edge density just under the coverage ratio
_EDGE_LOG = 30.0


def catalog(name: str, hbar: float = 1.0, mass: float = 1.0, **kw) -> CatalogEntry:
    """Look up a catalog state by name; keyword arguments override defaults."""
    if name == "ho_ground":
        omega = float(kw.pop("omega", 1.0))
        _no_extra(kw)
        return CatalogEntry(
            name,
            lambda g, t: ho_ground(omega, g, t, hbar, mass),
            lambda x: 0.5 * mass * omega**2 * x**2,
            force_scale=mass * omega**2,
            half_width=lambda tm: math.sqrt(_EDGE_LOG * hbar / (mass * omega)),
            center=lambda t: 0.0,
            stationary=True,
            params={"omega": omega},
            hbar=hbar,
            mass=mass,
        )
    if name == "ho_coherent":
        omega = float(kw.pop("omega", 1.0))
        amp = float(kw.pop("amplitude", 1.0))
        _no_extra(kw)
        return CatalogEntry(
            name,
            lambda g, t: ho_coherent(omega, amp, g, t, hbar, mass),
            lambda x: 0.5 * mass * omega**2 * x**2,
            force_scale=mass * omega**2,
            half_width=lambda tm: abs(amp) + math.sqrt(_EDGE_LOG * hbar / (mass * omega)),
            center=lambda t: 0.0,
            stationary=False,
            params={"omega": omega, "amplitude": amp},
            hbar=hbar,
            mass=mass,
        )
    if name == "free_gaussian":
        x0 = float(kw.pop("x0", 0.0))
        p0 = float(kw.pop("p0", 1.0))
        sigma0 = float(kw.pop("sigma0", 1.0))
        _no_extra(kw)
        return CatalogEntry(
            name,
            lambda g, t: free_gaussian(x0, p0, sigma0, g, t, hbar, mass),
            lambda x: np.zeros_like(x),
            force_scale=1.0,
            half_width=lambda tm: math.sqrt(2.0 * _EDGE_LOG * free_gaussian_variance(sigma0, tm, hbar, mass)),
            center=lambda t: x0 + p0 / mass * t,
            stationary=False,
            params={"x0": x0, "p0": p0, "sigma0": sigma0},
            hbar=hbar,
            mass=mass,
        )
    raise KeyError(f"unknown catalog state {name!r}")


CATALOG_NAMES = ("ho_ground", "ho_coherent", "free_gaussian")


def _no_extra(kw: dict) -> None:
    if kw:
        raise TypeError(f"unexpected state parameters: {sorted(kw)}")


def polar_decompose(
    psi_re: GridField,
    psi_im: GridField,
    floor: float = DENSITY_FLOOR,
    anchor: float | None = None,
) -> WavePolar:
    """Split sampled psi into (R, S).

    The phase is unwrapped along the grid starting from its principal value at
    ``x_min``. If ``anchor`` is given, S is shifted by a multiple of 2 pi so
    that S(x_min) lies within pi of it (keeps S continuous across time steps).
    ``floor`` is relative to the peak density; any point below it is a node.
    """
    if psi_re.grid != psi_im.grid:
        raise ValueError("real and imaginary parts on different grids")
    psi = psi_re.values + 1j * psi_im.values
    dens = np.abs(psi) ** 2
    peak = dens.max()
    bad = np.flatnonzero(dens <= floor * peak) if peak > 0 else np.arange(dens.size)
    if bad.size:
        x = psi_re.grid.x
        raise NodeError(
            f"density below floor {floor:g} of peak at {bad.size} points (first at x={x[bad[0]]:.6g})"
        )
    R = 0.5 * np.log(dens)
    S = np.unwrap(np.angle(psi))
    if anchor is not None:
        S = S + 2.0 * math.pi * round((anchor - S[0]) / (2.0 * math.pi))
    t = psi_re.time
    return WavePolar(GridField(psi_re.grid, R, t), GridField(psi_re.grid, S, t), t)


def from_psi(grid: Grid, psi: np.ndarray, t: float = 0.0, **kw) -> WavePolar:
    return polar_decompose(GridField(grid, psi.real, t), GridField(grid, psi.imag, t), **kw)


def _extrapolate(values: np.ndarray, pad: int) -> np.ndarray:
    """Extend samples by ``pad`` points per side with the quadratic through the end points."""
    i = np.arange(1, pad + 1)
    v = values

    def side(a, b, c):
        # Newton form of the quadratic through (0, a), (-1, b), (-2, c)
        return a + i * (a - b) + 0.5 * i * (i + 1) * (a - 2 * b + c)

    left = side(v[0], v[1], v[2])[::-1]
    right = side(v[-1], v[-2], v[-3])
    return np.concatenate([left, v, right])


# fourth-order central second derivative
_D2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


class _CrankNicolson:
    """(1 + i dt H / 2hbar) psi' = (1 - i dt H / 2hbar) psi on a padded grid.

    H = -hbar^2/(2m) D2 + V uses a five-point D2 with psi = 0 beyond the padded
    grid. Padding keeps the wall away from the tails of the state, where the
    density is tiny and any truncation error is large in relative terms.
    """

    def __init__(self, grid: Grid, V: np.ndarray, hbar: float, mass: float, dt: float, pad: int):
        self.pad = pad
        Vp = _extrapolate(np.asarray(V, dtype=float), pad)
        n = Vp.size
        k = -(hbar**2) / (2.0 * mass * grid.h**2)
        c = 0.5j * dt / hbar
        ab = np.zeros((5, n), dtype=complex)
        for j, w in enumerate(_D2):
            off = j - 2
            band = c * k * w * np.ones(n)
            if off == 0:
                band = band + c * Vp
            # solve_banded layout: ab[u + i - j, j] = a[i, j], u = 2
            if off >= 0:
                ab[2 - off, off:] = band[: n - off]
            else:
                ab[2 - off, : n + off] = band[: n + off]
        ab[2] += 1.0
        self.lhs = ab
        self.rhs = 2.0 * np.eye(5, 1, -2)[:, :1] - ab

    def _matvec(self, psi: np.ndarray) -> np.ndarray:
        out = self.rhs[2] * psi
        for off in (1, 2):
            out[:-off] += self.rhs[2 - off, off:] * psi[off:]
            out[off:] += self.rhs[2 + off, :-off] * psi[:-off]
        return out

    def step(self, psi: np.ndarray) -> np.ndarray:
        return solve_banded((2, 2), self.lhs, self._matvec(psi))


def schrodinger_step(
    state: WavePolar, V: GridField, params: ModelParams, dt: float, floor: float = DENSITY_FLOOR
) -> WavePolar:
    """One Crank-Nicolson step of the unscaled Schrodinger equation, back in polar form."""
    return evolve(state, V, params, dt, 1, floor=floor)


def evolve(
    state: WavePolar,
    V: GridField,
    params: ModelParams,
    dt: float,
    steps: int,
    floor: float = DENSITY_FLOOR,
    pad: int | None = None,
) -> WavePolar:
    """``steps`` Crank-Nicolson steps, re-split into polar form after each one.

    The padded tails are carried between steps; only the window on the
    original grid is decomposed (and checked for nodes).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    grid = state.grid
    pad = grid.n // 2 if pad is None else pad
    cn = _CrankNicolson(grid, V.values, params.hbar, params.mass, dt, pad)
    R = _extrapolate(state.R.values, pad)
    S = _extrapolate(state.S.values, pad)
    psi = np.exp(R + 1j * S)
    current = state
    window = slice(pad, pad + grid.n)
    for _ in range(steps):
        psi = cn.step(psi)
        current = from_psi(grid, psi[window], current.time + dt, floor=floor, anchor=current.S.values[0])
    return current
