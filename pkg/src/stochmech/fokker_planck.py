"""Forward (Fokker-Planck) equation for the diffusion with drift b and constant nu.

    d_t P + d_x (b P) - nu d_xx P = 0

Discretized in flux form on the grid nodes, each node owning the cell
between its neighbouring midpoints (half cells at the ends). Interface fluxes
use exponential fitting (Scharfetter-Gummel), which makes exp(integral b/nu)
an exact discrete equilibrium and keeps the scheme well behaved at large
cell Peclet numbers. The outer faces carry no flux, so the trapezoid mass is
conserved to round-off. Time stepping is Crank-Nicolson with a few
backward-Euler substeps at the start to damp the stiff modes of a sharp
initial condition.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import exprel

from .core import Grid, GridField, ModelParams
from .kinematics import make_drifts
from .states import WavePolar

MASS_TOL = 1e-6
NEG_TOL = 1e-12
DriftSpec = GridField | np.ndarray | Callable[[float], "GridField | np.ndarray"]


class SchemeError(RuntimeError):
    """The discrete solution lost mass or went negative beyond tolerance."""


@dataclass(frozen=True)
class DensityTrack:
    grid: Grid
    times: np.ndarray
    density: np.ndarray  # shape (len(times), grid.n)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.times)

    def slice(self, k: int) -> GridField:
        return GridField(self.grid, self.density[k], float(self.times[k]))

    def at(self, t: float) -> GridField:
        k = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[k], t, rel_tol=1e-9, abs_tol=1e-12):
            raise KeyError(f"time {t} not stored (nearest {self.times[k]})")
        return self.slice(k)

    def masses(self) -> np.ndarray:
        return np.trapezoid(self.density, dx=self.grid.h, axis=1)

    def means(self) -> np.ndarray:
        x = self.grid.x
        return np.trapezoid(self.density * x, dx=self.grid.h, axis=1) / self.masses()

    def variances(self) -> np.ndarray:
        x = self.grid.x
        m = self.means()[:, None]
        return np.trapezoid(self.density * (x - m) ** 2, dx=self.grid.h, axis=1) / self.masses()

    def write_csv(self, path) -> None:
        x = self.grid.x
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "bin_center", "density"])
            for t, row in zip(self.times, self.density):
                for xi, p in zip(x, row):
                    w.writerow([repr(float(t)), repr(float(xi)), repr(float(p))])


def l1_distance(p: np.ndarray, q: np.ndarray, grid: Grid) -> float:
    return grid.integrate(np.abs(np.asarray(p) - np.asarray(q)))


def _bernoulli(x: np.ndarray) -> np.ndarray:
    """x / (e^x - 1), finite for all x."""
    return 1.0 / exprel(x)


def _node_drift(drift: DriftSpec, t: float, n: int) -> np.ndarray:
    b = drift(t) if callable(drift) else drift
    b = np.asarray(b.values if isinstance(b, GridField) else b, dtype=float)
    if b.shape != (n,):
        raise ValueError(f"drift has shape {b.shape}, expected ({n},)")
    return b


def _generator_bands(b_face: np.ndarray, nu: float, h: float, widths: np.ndarray) -> np.ndarray:
    """Banded (1,1) form of the tridiagonal generator A with dP/dt = A P."""
    pe = b_face * h / nu
    alpha = nu / h * _bernoulli(-pe)  # weight of the left node in the face flux
    gamma = nu / h * _bernoulli(pe)  # weight of the right node
    n = widths.size
    ab = np.zeros((3, n))
    # flux F = alpha P_j - gamma P_{j+1} leaves node j and enters node j+1
    ab[1, :-1] -= alpha / widths[:-1]
    ab[1, 1:] -= gamma / widths[1:]
    ab[0, 1:] = gamma / widths[:-1]  # A[j, j+1]
    ab[2, :-1] = alpha / widths[1:]  # A[j+1, j]
    return ab


def _matvec(ab: np.ndarray, p: np.ndarray) -> np.ndarray:
    out = ab[1] * p
    out[:-1] += ab[0, 1:] * p[1:]
    out[1:] += ab[2, :-1] * p[:-1]
    return out


def solve_forward(
    drift: DriftSpec,
    params: ModelParams,
    initial: GridField,
    dt: float,
    T: float,
    record_every: int = 1,
    startup_steps: int = 2,
) -> DensityTrack:
    """Evolve ``initial`` to time T.

    ``drift`` is the nodal forward drift: a fixed field/array, or a callable of
    absolute time (the initial field's time stamp is the start). Face drifts
    are averages of the neighbouring nodes. The first step is replaced by
    ``startup_steps`` backward-Euler substeps.
    """
    grid = initial.grid
    if not isinstance(grid, Grid):
        raise TypeError("forward solver is 1-D")
    n, h, nu = grid.n, grid.h, params.nu
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt > 10.0 * h**2 / (2.0 * nu):
        warnings.warn(
            f"dt={dt:g} is more than 10x the explicit limit h^2/(2 nu)={h * h / (2 * nu):g}; "
            "accuracy of fast modes will suffer",
            stacklevel=2,
        )
    p = np.asarray(initial.values, dtype=float).copy()
    if p.min() < 0:
        raise ValueError("initial density is negative somewhere")
    widths = np.full(n, h)
    widths[0] = widths[-1] = 0.5 * h
    mass0 = float(np.dot(widths, p))
    if abs(mass0 - 1.0) > MASS_TOL:
        raise ValueError(f"initial density has mass {mass0}, expected 1")

    steps = int(round(T / dt))
    if not math.isclose(steps * dt, T, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError("T must be a whole number of steps")
    t0 = initial.time

    def bands(t: float) -> np.ndarray:
        b = _node_drift(drift, t, n)
        return _generator_bands(0.5 * (b[:-1] + b[1:]), nu, h, widths)

    frozen = None if callable(drift) else bands(t0)
    times, slices = [t0], [p.copy()]
    A_old = frozen if frozen is not None else bands(t0)
    for k in range(steps):
        t_new = t0 + (k + 1) * dt
        if k == 0 and startup_steps > 0:
            sub = dt / startup_steps
            for j in range(startup_steps):
                A = frozen if frozen is not None else bands(t0 + (j + 1) * sub)
                lhs = -sub * A
                lhs[1] += 1.0
                p = solve_banded((1, 1), lhs, p)
            A_old = frozen if frozen is not None else bands(t_new)
        else:
            A_new = frozen if frozen is not None else bands(t_new)
            lhs = -0.5 * dt * A_new
            lhs[1] += 1.0
            p = solve_banded((1, 1), lhs, p + 0.5 * dt * _matvec(A_old, p))
            A_old = A_new
        low = p.min()
        if low < -NEG_TOL:
            raise SchemeError(f"density reached {low:.3e} at t={t_new:g}")
        if low < 0:
            p = np.clip(p, 0.0, None)
            p /= np.dot(widths, p)
        drift_mass = abs(float(np.dot(widths, p)) - mass0)
        if drift_mass > MASS_TOL:
            raise SchemeError(f"mass drifted by {drift_mass:.3e} at t={t_new:g}")
        if (k + 1) % record_every == 0 or k + 1 == steps:
            times.append(t_new)
            slices.append(p.copy())
    return DensityTrack(grid, np.array(times), np.array(slices), {"nu": nu, "z": params.z, "dt": dt})


def narrow_gaussian(grid: Grid, y: float, eps: float) -> GridField:
    """Smoothed delta at y: Gaussian of standard deviation eps, unit trapezoid mass."""
    x = grid.x
    p = np.exp(-0.5 * ((x - y) / eps) ** 2)
    return GridField(grid, p / grid.integrate(p))


def default_delta_width(grid: Grid) -> float:
    return max(2.0 * grid.h, 0.02 * (grid.x_max - grid.x_min))


def transition_density(
    state: WavePolar,
    params: ModelParams,
    y: float,
    dt: float,
    T: float,
    eps: float | None = None,
    record_every: int = 1,
) -> DensityTrack:
    """P_t(., y) for a real stationary state, from a smoothed delta at y.

    The drift is the osmotic one, nu grad ln rho = 2 nu grad R; this is the
    full forward drift only when grad S = 0, which is checked.
    """
    grid = state.grid
    eps = default_delta_width(grid) if eps is None else eps
    if eps < 2.0 * grid.h * (1 - 1e-12):
        raise ValueError(f"delta width {eps} is below 2h = {2 * grid.h}")
    osmotic = 2.0 * params.nu * np.gradient(state.R.values, grid.h, edge_order=2)
    b = make_drifts(state, params).b.values
    gap = float(np.max(np.abs(b - osmotic)))
    if gap > 1e-10:
        raise ValueError(f"state carries a current (|b - 2 nu grad R| = {gap:.3e}); not stationary-real")
    track = solve_forward(osmotic, params, narrow_gaussian(grid, y, eps), dt, T, record_every=record_every)
    track.meta.update(y=y, eps=eps)
    return track


def equilibrium_check(track: DensityTrack, rho: GridField) -> np.ndarray:
    """L1 distance from each stored slice to rho."""
    r = np.asarray(rho.values)
    return np.array([l1_distance(p, r, track.grid) for p in track.density])


def ou_transition_oracle(theta: float, diffusion: float, y: float, t: float) -> tuple[float, float]:
    """Mean and variance of dX = -theta X dt + sqrt(diffusion) dW started at y.

    ``diffusion`` is the variance rate of the noise, 2 nu in the convention
    used throughout.
    """
    if not theta > 0:
        raise ValueError("theta must be positive")
    if t < 0:
        raise ValueError("t must be non-negative")
    mean = y * math.exp(-theta * t)
    var = diffusion / (2.0 * theta) * -math.expm1(-2.0 * theta * t)
    return mean, var


def ou_smoothed_moments(theta: float, diffusion: float, y: float, t: float, eps: float) -> tuple[float, float]:
    """Oracle moments when the start is N(y, eps^2) instead of a point."""
    mean, var = ou_transition_oracle(theta, diffusion, y, t)
    return mean, var + eps**2 * math.exp(-2.0 * theta * t)


def track_summary(track: DensityTrack, rho: GridField | None = None) -> dict:
    out = {
        "nu": track.meta.get("nu"),
        "z": track.meta.get("z"),
        "y": track.meta.get("y"),
        "times": [float(t) for t in track.times],
        "mean": [float(m) for m in track.means()],
        "var": [float(v) for v in track.variances()],
    }
    if rho is not None:
        out["l1_to_rho"] = [float(d) for d in equilibrium_check(track, rho)]
    return out


def summary_json(track: DensityTrack, rho: GridField | None = None) -> str:
    return json.dumps(track_summary(track, rho), allow_nan=False)


def resample(track: DensityTrack, times: Sequence[float]) -> DensityTrack:
    """Sub-track at the given stored times."""
    idx = []
    for t in times:
        k = int(np.argmin(np.abs(track.times - t)))
        if not math.isclose(track.times[k], t, rel_tol=1e-9, abs_tol=1e-12):
            raise KeyError(f"time {t} not stored")
        idx.append(k)
    return DensityTrack(track.grid, track.times[idx], track.density[idx], dict(track.meta))
