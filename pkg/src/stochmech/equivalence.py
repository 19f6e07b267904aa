"""Residuals of the unscaled and z-scaled Schrodinger equations in polar form.

Both equations are divided through by their wavefunction before the
residual is taken, so the real part is the Hamilton-Jacobi-like equation for
the phase and the imaginary part is the continuity equation. For a state
(R, S) that solves the unscaled equation, (R, S/z) solves the scaled one with
the extra potential ``(z^2 - 1) hbar^2/(2m) * lap(sqrt rho)/sqrt rho``: the two
real residuals coincide and the scaled imaginary residual is ``z`` times the
unscaled one.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import GridField, ModelParams, gradient, interior, laplacian
from .states import WavePolar

ROUTES = ("identity", "density")


def quantum_potential(R: GridField) -> GridField:
    """lap(sqrt rho)/sqrt rho written in terms of the log-amplitude: lap R + (grad R)^2."""
    dR = gradient(R)
    return laplacian(R) + dR * dR


def quantum_potential_from_density(rho: GridField) -> GridField:
    """lap(sqrt rho)/sqrt rho evaluated literally from the density samples."""
    amp = rho.like(np.sqrt(rho.values))
    return laplacian(amp) / amp


def log_amplitude_gradient(R: GridField, route: str = "identity") -> GridField:
    if route == "identity":
        return gradient(R)
    amp = R.like(np.exp(R.values))
    return gradient(amp) / amp


def _quantum_factor(R: GridField, route: str) -> GridField:
    if route == "identity":
        return quantum_potential(R)
    if route == "density":
        return quantum_potential_from_density(R.like(np.exp(2.0 * R.values)))
    raise ValueError(f"route must be one of {ROUTES}, got {route!r}")


@dataclass(frozen=True)
class ResidualReport:
    max_abs_real: float
    max_abs_imag: float
    l2_real: float
    l2_imag: float
    interior_only: bool
    grid_n: int
    h: float

    @classmethod
    def from_residuals(cls, real: np.ndarray, imag: np.ndarray, h: float, n: int, margin: int) -> ResidualReport:
        r, i = interior(real, margin), interior(imag, margin)
        return cls(
            max_abs_real=float(np.max(np.abs(r))),
            max_abs_imag=float(np.max(np.abs(i))),
            l2_real=float(math.sqrt(h * np.sum(r * r))),
            l2_imag=float(math.sqrt(h * np.sum(i * i))),
            interior_only=margin > 0,
            grid_n=n,
            h=h,
        )

    @property
    def max_abs(self) -> float:
        return max(self.max_abs_real, self.max_abs_imag)

    def record(self, check: str, params: ModelParams | None = None, **extra) -> dict:
        out = {"check": check}
        if params is not None:
            out.update(z=params.z, beta=params.beta, nu=params.nu)
        d = asdict(self)
        d.pop("interior_only")
        out.update(d)
        out.update(extra)
        return out


def to_json_line(record: dict) -> str:
    return json.dumps(record, allow_nan=False)


def _require_time_derivatives(state: WavePolar) -> None:
    if not state.has_time_derivatives:
        raise ValueError("residual needs the time derivatives of R and S")


def eq1_residual_fields(
    state: WavePolar, V: GridField, hbar: float, mass: float, route: str = "identity"
) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise (real, imaginary) residuals of the divided unscaled equation."""
    _require_time_derivatives(state)
    k = hbar**2 / (2.0 * mass)
    Q = _quantum_factor(state.R, route).values
    dR = log_amplitude_gradient(state.R, route).values
    dS = gradient(state.S).values
    lapS = laplacian(state.S).values
    real = -k * (Q - dS * dS) + V.values + hbar * state.S_t.values
    imag = -k * (lapS + 2.0 * dR * dS) - hbar * state.R_t.values
    return real, imag


def eq2_residual_fields(
    state: WavePolar, V: GridField, params: ModelParams, route: str = "identity"
) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise residuals of the divided z-scaled equation for exp(R + i S/z).

    ``state.S`` is the hbar-phase; the scaled equation is tested on S_N = S/z.
    The counter-term and the amplitude bracket share one evaluation of
    lap(sqrt rho)/sqrt rho, picked by ``route``.
    """
    _require_time_derivatives(state)
    z, hbar = params.z, params.hbar
    k = hbar**2 / (2.0 * params.mass)
    SN = state.S / z
    SN_t = state.S_t / z
    Q = _quantum_factor(state.R, route).values
    dR = log_amplitude_gradient(state.R, route).values
    dSN = gradient(SN).values
    lapSN = laplacian(SN).values
    zh = z * hbar
    scaled_k = zh**2 / (2.0 * params.mass)
    real = -scaled_k * (Q - dSN * dSN) + V.values + (z**2 - 1.0) * k * Q + hbar * z * SN_t.values
    imag = -scaled_k * (lapSN + 2.0 * dR * dSN) - zh * state.R_t.values
    return real, imag


def residual_eq1(
    state: WavePolar, V: GridField, hbar: float = 1.0, mass: float = 1.0, route: str = "identity", margin: int = 1
) -> ResidualReport:
    real, imag = eq1_residual_fields(state, V, hbar, mass, route)
    return ResidualReport.from_residuals(real, imag, state.grid.h, state.grid.n, margin)


def residual_eq2(
    state: WavePolar, V: GridField, params: ModelParams, route: str = "identity", margin: int = 1
) -> ResidualReport:
    real, imag = eq2_residual_fields(state, V, params, route)
    return ResidualReport.from_residuals(real, imag, state.grid.h, state.grid.n, margin)


@dataclass(frozen=True)
class SplitCheck:
    """Pointwise comparison of the scaled residuals against the unscaled ones."""

    z: float
    real_gap: float
    imag_gap: float

    def passed(self, tol: float = 1e-12) -> bool:
        return self.real_gap <= tol and self.imag_gap <= tol


def split_identity_check(
    state: WavePolar, V: GridField, params: ModelParams, route: str = "identity"
) -> SplitCheck:
    """max |real2 - real1| and max |imag2 - z*imag1| over the whole grid."""
    r1, i1 = eq1_residual_fields(state, V, params.hbar, params.mass, route)
    r2, i2 = eq2_residual_fields(state, V, params, route)
    return SplitCheck(params.z, float(np.max(np.abs(r2 - r1))), float(np.max(np.abs(i2 - params.z * i1))))


def momentum_expectation(state: WavePolar, params: ModelParams) -> tuple[float, float]:
    """<-i hbar d/dx> from psi, and the drift form  int rho 2 m nu grad(S/z).

    grad psi is taken as psi * (grad R + i grad S) so both sides share the
    same discrete derivatives; the imaginary part of the left side is a
    boundary term and is dropped.
    """
    grid = state.grid
    psi = state.psi()
    dpsi = psi * (gradient(state.R).values + 1j * gradient(state.S).values)
    lhs_c = grid.integrate(np.conj(psi) * (-1j * params.hbar) * dpsi)
    rho = np.exp(2.0 * state.R.values)
    SN = state.S / params.z
    rhs = grid.integrate(rho * 2.0 * params.mass * params.nu * gradient(SN).values)
    return float(lhs_c.real), float(rhs)


def convergence_ratio(coarse: float, fine: float) -> float:
    return coarse / fine if fine > 0 else math.inf


ROUNDOFF_FLOOR = 1e-9


def second_order(coarse: float, fine: float, rel: float = 0.2, floor: float = ROUNDOFF_FLOOR) -> bool:
    """True if a grid-halving pair of errors shrinks by 4 (+-rel), or both sit at round-off.

    Residuals built from quadratic fields are reproduced exactly by the
    stencils; those have nothing to converge and are accepted at ``floor``.
    """
    if coarse <= floor and fine <= floor:
        return True
    return bool(abs(convergence_ratio(coarse, fine) - 4.0) <= 4.0 * rel)
