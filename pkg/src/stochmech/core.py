"""Model parameters, uniform grids and finite-difference calculus on grid fields.

The generalized model links three numbers: the diffusion constant ``nu``, the
dynamical weight ``beta`` of the osmotic term and the phase scale ``z``::

    z * hbar = 2 * mass * nu
    z = 1 / sqrt(1 - beta / 2)

``beta = 0`` gives the standard diffusion constant ``hbar / (2 mass)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_REL_TOL = 1e-12


class ParameterError(ValueError):
    """Raised when a parameter set violates the z-beta-nu relations."""


def _close(a: float, b: float, rel: float = _REL_TOL) -> bool:
    return abs(a - b) <= rel * max(abs(a), abs(b), 1e-300)


@dataclass(frozen=True)
class ModelParams:
    """Physical constants plus the linked triple (nu, beta, z).

    All three members of the triple are stored; construction checks that they
    are mutually consistent. Use :func:`params_from_beta` or
    :func:`params_from_nu` rather than building one by hand.
    """

    hbar: float
    mass: float
    nu: float
    beta: float
    z: float

    def __post_init__(self) -> None:
        if not (self.hbar > 0 and self.mass > 0):
            raise ParameterError("hbar and mass must be positive")
        if not self.nu > 0:
            raise ParameterError(f"nu must be positive, got {self.nu}")
        if not self.beta < 2:
            raise ParameterError(f"beta must be < 2, got {self.beta}")
        if not self.z > 0:
            raise ParameterError(f"z must be positive, got {self.z}")
        if not _close(self.z * self.hbar, 2 * self.mass * self.nu):
            raise ParameterError("z*hbar != 2*mass*nu")
        if not _close(self.z, 1.0 / math.sqrt(1.0 - self.beta / 2.0)):
            raise ParameterError("z != 1/sqrt(1 - beta/2)")

    @property
    def current_scale(self) -> float:
        """hbar/mass, the factor turning a phase gradient into a velocity."""
        return self.hbar / self.mass


def params_from_beta(beta: float, hbar: float = 1.0, mass: float = 1.0) -> ModelParams:
    if not beta < 2:
        raise ParameterError(f"beta must be < 2 (z = 1/sqrt(1-beta/2)), got {beta}")
    z = 1.0 / math.sqrt(1.0 - beta / 2.0)
    nu = z * hbar / (2.0 * mass)
    return ModelParams(hbar=hbar, mass=mass, nu=nu, beta=beta, z=z)


def params_from_nu(nu: float, hbar: float = 1.0, mass: float = 1.0) -> ModelParams:
    if not nu > 0:
        raise ParameterError(f"nu must be positive, got {nu}")
    z = 2.0 * mass * nu / hbar
    beta = 2.0 * (1.0 - 1.0 / z**2)
    return ModelParams(hbar=hbar, mass=mass, nu=nu, beta=beta, z=z)


def params_from_z(z: float, hbar: float = 1.0, mass: float = 1.0) -> ModelParams:
    if not z > 0:
        raise ParameterError(f"z must be positive, got {z}")
    return params_from_nu(z * hbar / (2.0 * mass), hbar=hbar, mass=mass)


@dataclass(frozen=True)
class Grid:
    """Uniform 1-D grid of ``n`` points spanning ``[x_min, x_max]``."""

    x_min: float
    x_max: float
    n: int

    def __post_init__(self) -> None:
        if self.n < 3:
            raise ValueError(f"grid needs at least 3 points, got {self.n}")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n)

    def refined(self) -> Grid:
        """Same interval with the spacing halved."""
        return Grid(self.x_min, self.x_max, 2 * (self.n - 1) + 1)

    def integrate(self, values: np.ndarray) -> float | complex:
        """Trapezoid rule over the grid (complex integrands give a complex result)."""
        total = np.trapezoid(values, dx=self.h)
        return complex(total) if np.iscomplexobj(total) else float(total)


@dataclass(frozen=True)
class Grid2D:
    """Tensor product of two uniform grids; arrays are indexed ``[ix, iy]``."""

    gx: Grid
    gy: Grid

    @property
    def shape(self) -> tuple[int, int]:
        return (self.gx.n, self.gy.n)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.gx.x, self.gy.x, indexing="ij")


@dataclass(frozen=True, eq=False)
class GridField:
    """Real samples of a scalar field on a grid at one time."""

    grid: Grid | Grid2D
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float)
        shape = (self.grid.n,) if isinstance(self.grid, Grid) else self.grid.shape
        if vals.shape != shape:
            raise ValueError(f"values shape {vals.shape} does not match grid {shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid field has non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def like(self, values: np.ndarray) -> GridField:
        return GridField(self.grid, values, self.time)

    def _other(self, other):
        if isinstance(other, GridField):
            if other.grid != self.grid:
                raise ValueError("grid mismatch")
            return other.values
        return other

    def __add__(self, other) -> GridField:
        return self.like(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other) -> GridField:
        return self.like(self.values - self._other(other))

    def __rsub__(self, other) -> GridField:
        return self.like(self._other(other) - self.values)

    def __mul__(self, other) -> GridField:
        return self.like(self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other) -> GridField:
        return self.like(self.values / self._other(other))

    def __neg__(self) -> GridField:
        return self.like(-self.values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def coordinate_field(grid: Grid, time: float = 0.0) -> GridField:
    """The field f(x) = x."""
    return GridField(grid, grid.x, time)


def _require_1d(f: GridField) -> Grid:
    if not isinstance(f.grid, Grid):
        raise TypeError("expected a 1-D grid field")
    return f.grid


def derivative(values: np.ndarray, h: float, axis: int = 0) -> np.ndarray:
    """First derivative, central inside and one-sided second order at the edges."""
    return np.gradient(values, h, axis=axis, edge_order=2)


def second_derivative(values: np.ndarray, h: float, axis: int = 0) -> np.ndarray:
    v = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2
    if v.shape[0] >= 4:
        out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h**2
        out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h**2
    else:
        # three points: the only available stencil, exact for quadratics
        out[0] = out[1]
        out[-1] = out[1]
    return np.moveaxis(out, 0, axis)


def gradient(f: GridField) -> GridField:
    grid = _require_1d(f)
    return f.like(derivative(f.values, grid.h))


def laplacian(f: GridField) -> GridField:
    grid = _require_1d(f)
    return f.like(second_derivative(f.values, grid.h))


def interior(values: np.ndarray, margin: int = 1) -> np.ndarray:
    """Drop ``margin`` points at each end of a 1-D array."""
    if margin <= 0:
        return np.asarray(values)
    return np.asarray(values)[margin:-margin]
