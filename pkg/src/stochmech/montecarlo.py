"""Euler-Maruyama ensembles for dx = b(x, t) dt + dW with E[dW^2] = 2 nu dt.

Noise convention: the generator of the process is b . grad + nu lap, so the
Wiener increment over dt has variance 2 nu dt (not nu dt).

Paths are simulated in fixed-size blocks. Each block draws from its own
counter-based (Philox) stream keyed by the master seed and the block index,
so results do not depend on how blocks are scheduled.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .core import Grid, GridField, ModelParams
from .kinematics import make_drifts
from .states import WavePolar

DriftFn = Callable[[np.ndarray, float], np.ndarray]
InitSpec = Callable[[np.random.Generator, int], np.ndarray] | np.ndarray | float

BLOCK_SIZE = 4096
NOISE_CHUNK = 64
MAX_STORED = 50_000_000
DEFAULT_SEED = 20240601


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Positions of N paths at the recorded step indices."""

    positions: np.ndarray  # (N, len(steps))
    steps: np.ndarray
    dt: float
    seed: int
    params: ModelParams
    t0: float = 0.0

    @property
    def n_paths(self) -> int:
        return self.positions.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.steps * self.dt

    def at(self, step: int) -> np.ndarray:
        idx = np.flatnonzero(self.steps == step)
        if idx.size == 0:
            raise KeyError(f"step {step} was not recorded")
        return self.positions[:, idx[0]]

    def summary_rows(self) -> list[tuple]:
        rows = []
        for j, k in enumerate(self.steps):
            col = self.positions[:, j]
            rows.append((int(k), float(self.t0 + k * self.dt), float(col.mean()), float(col.var(ddof=1)), self.n_paths))
        return rows

    def write_summary_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "time", "mean", "var", "n_paths"])
            for row in self.summary_rows():
                w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3]), row[4]])


def derive_seed(seed: int, *key: int) -> int:
    """Independent 64-bit seed for a labelled sub-run (e.g. one entry of a nu sweep)."""
    return int(np.random.SeedSequence(seed, spawn_key=tuple(key)).generate_state(1, np.uint64)[0])


def _stream(seed: int, block: int, purpose: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(block, purpose))
    return np.random.Generator(np.random.Philox(ss))


class _Noise:
    """Standard normals for all paths, one row per step, drawn per block in chunks of steps."""

    def __init__(self, seed: int, blocks: list[tuple[int, int]], width: int = 1):
        self.rngs = [_stream(seed, b, 1) for b in range(len(blocks))]
        self.blocks = blocks
        self.width = width
        self.n = blocks[-1][1] if blocks else 0
        self.buf = np.empty((0, width, self.n))
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.pos == self.buf.shape[0]:
            self.buf = np.empty((NOISE_CHUNK, self.width, self.n))
            for rng, (lo, hi) in zip(self.rngs, self.blocks):
                self.buf[:, :, lo:hi] = rng.standard_normal((NOISE_CHUNK, self.width, hi - lo))
            self.pos = 0
        row = self.buf[self.pos]
        self.pos += 1
        return row


def _blocks(n: int, size: int) -> list[tuple[int, int]]:
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def _initial(x_init: InitSpec, n: int, seed: int, blocks) -> np.ndarray:
    if callable(x_init):
        return np.concatenate([np.asarray(x_init(_stream(seed, b, 0), hi - lo), dtype=float) for b, (lo, hi) in enumerate(blocks)])
    arr = np.asarray(x_init, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"initial positions have shape {arr.shape}, expected ({n},)")
    return arr.copy()


def gaussian_init(mean: float, std: float) -> Callable[[np.random.Generator, int], np.ndarray]:
    return lambda rng, n: rng.normal(mean, std, n)


def _record_set(record: Iterable[int] | None, steps: int) -> np.ndarray:
    if record is None:
        return np.arange(steps + 1)
    rec = np.unique(np.asarray(list(record), dtype=int))
    if rec.size and (rec[0] < 0 or rec[-1] > steps):
        raise ValueError("recorded steps must lie in [0, steps]")
    return rec


def simulate(
    drift: DriftFn,
    params: ModelParams,
    x_init: InitSpec,
    dt: float,
    steps: int,
    n_paths: int,
    seed: int = DEFAULT_SEED,
    record: Iterable[int] | None = None,
    t0: float = 0.0,
    block_size: int = BLOCK_SIZE,
) -> Ensemble:
    """Euler-Maruyama: x_{k+1} = x_k + b(x_k, t_k) dt + sqrt(2 nu dt) xi_k.

    ``record`` lists the step indices to keep (default: all of them).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if n_paths < 1 or steps < 0:
        raise ValueError("need n_paths >= 1 and steps >= 0")
    rec = _record_set(record, steps)
    if n_paths * rec.size > MAX_STORED:
        raise MemoryError(f"{n_paths} paths x {rec.size} recorded steps exceeds the storage budget; pass record=")
    blocks = _blocks(n_paths, block_size)
    noise = _Noise(seed, blocks)
    x = _initial(x_init, n_paths, seed, blocks)
    out = np.empty((n_paths, rec.size))
    slot = {int(k): j for j, k in enumerate(rec)}
    if 0 in slot:
        out[:, slot[0]] = x
    scale = math.sqrt(2.0 * params.nu * dt)
    for k in range(steps):
        t = t0 + k * dt
        xi = noise.next()[0]
        x += drift(x, t) * dt
        x += scale * xi
        _check_finite(x, k + 1)
        if k + 1 in slot:
            out[:, slot[k + 1]] = x
    return Ensemble(out, rec, dt, seed, params, t0)


def simulate_coupled(
    drift: DriftFn,
    params: ModelParams,
    x_init: InitSpec,
    dt: float,
    steps: int,
    n_paths: int,
    seed: int = DEFAULT_SEED,
    t0: float = 0.0,
    block_size: int = BLOCK_SIZE,
) -> tuple[Ensemble, Ensemble]:
    """Coarse (dt) and fine (dt/2) ensembles driven by the same Brownian paths.

    Only the final positions are recorded. The coarse increment is the sum of
    the two fine ones, so differences between the ensembles isolate the time
    step bias.
    """
    blocks = _blocks(n_paths, block_size)
    noise = _Noise(seed, blocks, width=2)
    xc = _initial(x_init, n_paths, seed, blocks)
    xf = xc.copy()
    half = 0.5 * dt
    s_half = math.sqrt(2.0 * params.nu * half)
    for k in range(steps):
        t = t0 + k * dt
        xi1, xi2 = noise.next()
        xf = xf + drift(xf, t) * half + s_half * xi1
        xf = xf + drift(xf, t + half) * half + s_half * xi2
        xc = xc + drift(xc, t) * dt + s_half * (xi1 + xi2)
        _check_finite(xc, k + 1)
        _check_finite(xf, 2 * (k + 1))
    coarse = Ensemble(xc[:, None], np.array([steps]), dt, seed, params, t0)
    fine = Ensemble(xf[:, None], np.array([2 * steps]), half, seed, params, t0)
    return coarse, fine


def _check_finite(x: np.ndarray, step: int) -> None:
    if np.isfinite(x).all():
        return
    bad = np.flatnonzero(~np.isfinite(x))
    if bad.size:
        raise SimulationError(f"path {bad[0]} became non-finite at step {step} ({bad.size} paths affected)")


def linear_drift(theta: float, center: float = 0.0) -> DriftFn:
    """b(x) = -theta (x - center), the oscillator ground-state drift with theta = z omega."""
    return lambda x, t: -theta * (x - center)


class StateDrift:
    """Forward (or backward) drift of a catalog state, rebuilt on a grid at each t.

    Between grid points the drift is linearly interpolated; outside the grid it
    is held at the edge value, so the grid must cover the ensemble.
    """

    def __init__(self, build: Callable[[Grid, float], WavePolar], grid: Grid, params: ModelParams, backward: bool = False):
        self.build = build
        self.grid = grid
        self.params = params
        self.backward = backward
        self._cache: tuple[float, np.ndarray] | None = None

    def field(self, t: float) -> np.ndarray:
        if self._cache is None or self._cache[0] != t:
            d = make_drifts(self.build(self.grid, t), self.params)
            self._cache = (t, np.asarray((d.b_star if self.backward else d.b).values))
        return self._cache[1]

    def __call__(self, x: np.ndarray, t: float) -> np.ndarray:
        # uniform grid: locate cells arithmetically rather than by binary search
        f = self.field(t)
        g = self.grid
        u = np.clip((x - g.x_min) / g.h, 0.0, g.n - 1)
        j = np.minimum(u.astype(np.intp), g.n - 2)
        w = u - j
        return f[j] + w * (f[j + 1] - f[j])


@dataclass(frozen=True)
class BinnedEstimate:
    centers: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    count: np.ndarray
    x_mean: np.ndarray | None = None
    sample_size: int = 0
    edges: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.centers)

    @property
    def widths(self) -> np.ndarray:
        if self.edges is None:
            raise ValueError("estimate carries no bin edges")
        return np.diff(self.edges)


def _bin_edges(bins, samples: np.ndarray) -> np.ndarray:
    if isinstance(bins, tuple) and len(bins) == 3:
        n, lo, hi = bins
        return np.linspace(lo, hi, int(n) + 1)
    edges = np.asarray(bins, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bins must be increasing edges or (count, lo, hi)")
    return edges


def _assign(samples: np.ndarray, edges: np.ndarray) -> np.ndarray:
    if samples.min() < edges[0] or samples.max() > edges[-1]:
        raise ValueError(f"samples span [{samples.min():.4g}, {samples.max():.4g}] beyond bins [{edges[0]:.4g}, {edges[-1]:.4g}]")
    idx = np.searchsorted(edges, samples, side="right") - 1
    return np.clip(idx, 0, edges.size - 2)


def empirical_density(ensemble: Ensemble, step: int, bins) -> BinnedEstimate:
    """Normalized histogram with multinomial standard errors."""
    x = ensemble.at(step)
    edges = _bin_edges(bins, x)
    idx = _assign(x, edges)
    n = x.size
    count = np.bincount(idx, minlength=edges.size - 1)
    width = np.diff(edges)
    p = count / n
    return BinnedEstimate(
        centers=0.5 * (edges[:-1] + edges[1:]),
        estimate=p / width,
        stderr=np.sqrt(p * (1.0 - p) / n) / width,
        count=count,
        sample_size=n,
        edges=edges,
    )


def histogram_l1(est: BinnedEstimate, reference: np.ndarray) -> float:
    """sum_i |hist_i - ref_i| * width_i; ``reference`` holds per-bin average densities."""
    return float(np.sum(np.abs(est.estimate - np.asarray(reference)) * est.widths))


def bin_averages(density: GridField, edges: np.ndarray, sub: int = 16) -> np.ndarray:
    """Average of a sampled density over each bin (linear interpolation, midpoint sub-samples)."""
    edges = np.asarray(edges, dtype=float)
    frac = (np.arange(sub) + 0.5) / sub
    pts = edges[:-1, None] + np.diff(edges)[:, None] * frac[None, :]
    vals = np.interp(pts, density.grid.x, density.values, left=0.0, right=0.0)
    return vals.mean(axis=1)


def _binned_mean(x: np.ndarray, y: np.ndarray, edges: np.ndarray, min_count: int) -> BinnedEstimate:
    """Conditional means per bin; samples outside the bins are ignored (a drift window need not cover the tails)."""
    n_all = x.size
    inside = (x >= edges[0]) & (x <= edges[-1])
    x, y = x[inside], y[inside]
    idx = _assign(x, edges) if x.size else np.zeros(0, dtype=np.intp)
    nb = edges.size - 1
    count = np.bincount(idx, minlength=nb)
    s1 = np.bincount(idx, weights=y, minlength=nb)
    s2 = np.bincount(idx, weights=y * y, minlength=nb)
    sx = np.bincount(idx, weights=x, minlength=nb)
    keep = count >= max(min_count, 2)
    c = count[keep].astype(float)
    mean = s1[keep] / c
    var = (s2[keep] - c * mean**2) / (c - 1.0)
    return BinnedEstimate(
        centers=0.5 * (edges[:-1] + edges[1:])[keep],
        estimate=mean,
        stderr=np.sqrt(np.maximum(var, 0.0) / c),
        count=count[keep],
        x_mean=sx[keep] / c,
        sample_size=n_all,
    )


def estimate_forward_drift(ensemble: Ensemble, step: int, bins, min_count: int = 30) -> BinnedEstimate:
    """Per-bin mean of (x_{k+1} - x_k)/dt conditioned on x_k; sparse bins are dropped."""
    xk, xn = ensemble.at(step), ensemble.at(step + 1)
    return _binned_mean(xk, (xn - xk) / ensemble.dt, _bin_edges(bins, xk), min_count)


def estimate_backward_drift(ensemble: Ensemble, step: int, bins, min_count: int = 30) -> BinnedEstimate:
    """Per-bin mean of (x_k - x_{k-1})/dt conditioned on x_k."""
    if step < 1:
        raise KeyError("backward drift needs a previous step")
    xk, xp = ensemble.at(step), ensemble.at(step - 1)
    return _binned_mean(xk, (xk - xp) / ensemble.dt, _bin_edges(bins, xk), min_count)


def estimate_osmotic_velocity(ensemble: Ensemble, step: int, bins, min_count: int = 30) -> BinnedEstimate:
    """Per-bin mean of the half-difference of forward and backward increments.

    Computed per sample, so the standard error accounts for the correlation
    between the two estimates.
    """
    xk, xn, xp = ensemble.at(step), ensemble.at(step + 1), ensemble.at(step - 1)
    u = (xn - 2.0 * xk + xp) / (2.0 * ensemble.dt)
    return _binned_mean(xk, u, _bin_edges(bins, xk), min_count)


def write_density_csv(est: BinnedEstimate, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_center", "density", "stderr"])
        for c, d, s in zip(est.centers, est.estimate, est.stderr):
            w.writerow([repr(float(c)), repr(float(d)), repr(float(s))])


def write_drift_csv(fwd: BinnedEstimate, bwd: BinnedEstimate, path) -> None:
    """Bins present in both estimates, one row each."""
    common = np.intersect1d(fwd.centers, bwd.centers)
    fi = {float(c): i for i, c in enumerate(fwd.centers)}
    bi = {float(c): i for i, c in enumerate(bwd.centers)}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_center", "b_hat", "b_star_hat", "stderr_fwd", "stderr_bwd", "count"])
        for c in common:
            i, j = fi[float(c)], bi[float(c)]
            w.writerow(
                [
                    repr(float(c)),
                    repr(float(fwd.estimate[i])),
                    repr(float(bwd.estimate[j])),
                    repr(float(fwd.stderr[i])),
                    repr(float(bwd.stderr[j])),
                    int(fwd.count[i]),
                ]
            )


def variance_with_stderr(x: np.ndarray) -> tuple[float, float]:
    """Sample variance and its standard error, sqrt((m4 - var^2)/N)."""
    n = x.size
    c = x - x.mean()
    var = float(np.dot(c, c) / (n - 1))
    m4 = float(np.mean(c**4))
    return var, math.sqrt(max(m4 - var**2, 0.0) / n)


def lag_autocorrelation(ensemble: Ensemble, step: int, lag: int = 1) -> tuple[float, float]:
    """Ensemble correlation of x_k and x_{k+lag}, with the large-N standard error (1 - r^2)/sqrt(N)."""
    a, b = ensemble.at(step), ensemble.at(step + lag)
    r = float(np.corrcoef(a, b)[0, 1])
    return r, (1.0 - r * r) / math.sqrt(a.size)
