"""Grids, densities and finite-difference solvers for 1-D linear parabolic equations.

Two solvers live here:

* :func:`solve_fp_forward` -- forward Fokker-Planck equation in divergence form,
  ``m_t + (b m)_x = 1/2 (sigma^2 m)_xx``, discretised as a finite-volume scheme
  with upwind advective fluxes and zero-flux walls.  The scheme conserves the
  trapezoid mass exactly and (implicit Euler) preserves positivity.
* :func:`solve_hjb_backward` -- backward linear HJB-type equation
  ``-v_t - b v_x = 1/2 sigma^2 v_xx + f`` with upwind drift and implicit time
  stepping from the terminal condition.

Row ``k`` of a drift matrix is the drift applied on ``[t_k, t_{k+1})``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Union

import numpy as np
from scipy.linalg import solve_banded

from .errors import GridMismatch, MassDrift, NonPositiveDiffusion

MASS_TOL = 1e-6

SigmaLike = Union[float, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class SpatialGrid:
    x_min: float
    x_max: float
    n_x: int

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be < x_max")
        if self.n_x < 16:
            raise ValueError("n_x must be >= 16")

    @classmethod
    def symmetric(cls, half_width: float, n_x: int) -> "SpatialGrid":
        return cls(-float(half_width), float(half_width), int(n_x))

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.n_x - 1)

    @cached_property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_x)

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights (also the finite-volume cell widths)."""
        w = np.full(self.n_x, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Trapezoid integral over the last axis."""
        return np.asarray(values) @ self.weights


@dataclass(frozen=True)
class TimeMesh:
    horizon: float
    n_t: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.n_t < 2:
            raise ValueError("n_t must be >= 2")

    @property
    def dt(self) -> float:
        return self.horizon / (self.n_t - 1)

    @cached_property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_t)


def _check_same_grid(a: SpatialGrid, b: SpatialGrid):
    if a != b:
        raise GridMismatch(f"{a} != {b}")


@dataclass(frozen=True, eq=False)
class Density:
    """Probability density sampled on grid nodes."""

    grid: SpatialGrid
    values: np.ndarray
    mass_tol: float = MASS_TOL

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.n_x,):
            raise ValueError(f"expected {self.grid.n_x} values, got shape {vals.shape}")
        if np.any(vals < 0):
            raise ValueError("density values must be nonnegative")
        mass = float(self.grid.integrate(vals))
        if abs(mass - 1.0) > self.mass_tol:
            raise ValueError(f"density mass {mass:.10g} is not 1 (tol {self.mass_tol:g})")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_values(cls, grid: SpatialGrid, values) -> "Density":
        """Ingest raw nonnegative grid values, renormalising to unit mass."""
        vals = np.clip(np.asarray(values, dtype=float), 0.0, None)
        mass = grid.integrate(vals)
        if not mass > 0:
            raise ValueError("values carry no mass")
        return cls(grid, vals / mass)

    @classmethod
    def gaussian(cls, grid: SpatialGrid, mean: float = 0.0, var: float = 1.0) -> "Density":
        x = grid.x
        return cls.from_values(grid, np.exp(-((x - mean) ** 2) / (2.0 * var)))

    @classmethod
    def uniform(cls, grid: SpatialGrid, lo: float, hi: float) -> "Density":
        # cell-averaged indicator, so the support edges need not be grid nodes
        h = grid.h
        left = np.maximum(grid.x - h / 2, lo)
        right = np.minimum(grid.x + h / 2, hi)
        return cls.from_values(grid, np.clip(right - left, 0.0, None))

    @classmethod
    def bimodal(cls, grid: SpatialGrid, centers=(-1.0, 1.0), var: float = 0.25,
                weights=(0.5, 0.5)) -> "Density":
        x = grid.x
        vals = sum(w * np.exp(-((x - c) ** 2) / (2 * var)) / np.sqrt(2 * np.pi * var)
                   for c, w in zip(centers, weights))
        return cls.from_values(grid, vals)

    @classmethod
    def point_mass(cls, grid: SpatialGrid, x0: float) -> "Density":
        """Hat function of width 2h centred at ``x0`` (the grid's best delta)."""
        vals = np.clip(1.0 - np.abs(grid.x - x0) / grid.h, 0.0, None)
        return cls.from_values(grid, vals)

    def mass(self) -> float:
        return float(self.grid.integrate(self.values))

    def mean(self) -> float:
        return mean_of(self)

    def moment(self, psi: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(self.grid.integrate(psi(self.grid.x) * self.values))


def mean_of(d: Density) -> float:
    return float(d.grid.integrate(d.grid.x * d.values))


def mass_of(d: Density) -> float:
    return d.mass()


def _cdf(values: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Cumulative trapezoid integral along the last axis."""
    v = np.asarray(values)
    inc = 0.5 * grid.h * (v[..., 1:] + v[..., :-1])
    out = np.zeros_like(v)
    np.cumsum(inc, axis=-1, out=out[..., 1:])
    return out


def mk_distance(mu: Density, nu: Density) -> float:
    """Monge-Kantorovich (Wasserstein-1) distance via the L1 norm of the CDF gap."""
    _check_same_grid(mu.grid, nu.grid)
    gap = np.abs(_cdf(mu.values, mu.grid) - _cdf(nu.values, nu.grid))
    return float(mu.grid.integrate(gap))


def l2_norm(values, grid: SpatialGrid) -> float:
    return float(np.sqrt(grid.integrate(np.asarray(values, dtype=float) ** 2)))


def sup_norm(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(np.max(np.abs(v))) if v.size else 0.0


@dataclass(frozen=True, eq=False)
class DensityFlow:
    """Densities at every node of a time mesh; ``frames[k]`` is the density at ``t_k``."""

    grid: SpatialGrid
    mesh: TimeMesh
    frames: np.ndarray

    def __post_init__(self):
        fr = np.asarray(self.frames, dtype=float)
        if fr.shape != (self.mesh.n_t, self.grid.n_x):
            raise ValueError(f"frames shape {fr.shape} does not match mesh x grid")
        object.__setattr__(self, "frames", fr)

    def frame(self, k: int) -> Density:
        return Density(self.grid, self.frames[k])

    def masses(self) -> np.ndarray:
        return self.grid.integrate(self.frames)

    def means(self) -> np.ndarray:
        return self.grid.integrate(self.frames * self.grid.x)

    def at(self, t: float) -> Density:
        """Density at time ``t``, linearly interpolated between mesh nodes."""
        s = np.clip(t / self.mesh.dt, 0, self.mesh.n_t - 1)
        k = min(int(np.floor(s)), self.mesh.n_t - 2)
        lam = s - k
        vals = (1 - lam) * self.frames[k] + lam * self.frames[k + 1]
        return Density.from_values(self.grid, vals)

    def distance(self, other: "DensityFlow") -> float:
        return flow_distance(self, other)


def flow_distance(a: DensityFlow, b: DensityFlow) -> float:
    """Sup over time nodes of the d1 distance between corresponding frames."""
    _check_same_grid(a.grid, b.grid)
    if a.mesh != b.mesh:
        raise GridMismatch("flows live on different time meshes")
    gap = np.abs(_cdf(a.frames, a.grid) - _cdf(b.frames, b.grid))
    return float(np.max(a.grid.integrate(gap)))


@dataclass(frozen=True, eq=False)
class ValueField:
    grid: SpatialGrid
    mesh: TimeMesh
    v: np.ndarray
    v_x: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.v_x is None:
            object.__setattr__(self, "v_x", gradient(self.v, self.grid))


def gradient(v: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Centered differences inside, second-order one-sided at the two ends."""
    return np.gradient(v, grid.h, axis=-1, edge_order=2)


@dataclass(frozen=True, eq=False)
class DriftField:
    grid: SpatialGrid
    mesh: TimeMesh
    b: np.ndarray
    bounds: tuple = (-np.inf, np.inf)

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float)
        if b.shape != (self.mesh.n_t, self.grid.n_x):
            raise ValueError(f"drift shape {b.shape} does not match mesh x grid")
        lo, hi = self.bounds
        if np.any(b < lo - 1e-12) or np.any(b > hi + 1e-12):
            raise ValueError(f"drift leaves its bounds [{lo}, {hi}]")
        object.__setattr__(self, "b", b)

    @classmethod
    def constant(cls, grid, mesh, value: float, bounds=None) -> "DriftField":
        bounds = (value, value) if bounds is None else bounds
        return cls(grid, mesh, np.full((mesh.n_t, grid.n_x), float(value)), tuple(bounds))

    @classmethod
    def from_function(cls, grid, mesh, fn, bounds=(-np.inf, np.inf)) -> "DriftField":
        t, x = np.meshgrid(mesh.t, grid.x, indexing="ij")
        return cls(grid, mesh, np.broadcast_to(fn(t, x), t.shape).copy(), tuple(bounds))

    def sup(self) -> float:
        return sup_norm(self.b)


def sigma_squared(sigma: SigmaLike, grid: SpatialGrid) -> np.ndarray:
    if callable(sigma):
        s = np.broadcast_to(np.asarray(sigma(grid.x), dtype=float), grid.x.shape)
    else:
        s = np.full(grid.n_x, float(sigma))
    s2 = s * s
    if np.min(s2) <= 0:
        raise NonPositiveDiffusion(f"min sigma^2 = {np.min(s2):g} on the grid")
    return s2


# -- Fokker-Planck ---------------------------------------------------------

def _fp_fluxes(b_row, s2, h):
    """Flux F_{i+1/2} = P_i m_i + Q_i m_{i+1} on the n-1 interfaces."""
    bi = 0.5 * (b_row[1:] + b_row[:-1])
    P = np.maximum(bi, 0.0) + s2[:-1] / (2 * h)
    Q = np.minimum(bi, 0.0) - s2[1:] / (2 * h)
    return P, Q


def _fp_apply(P, Q, m):
    flux = P * m[:-1] + Q * m[1:]
    out = np.zeros_like(m)
    out[:-1] -= flux
    out[1:] += flux
    return out


def _fp_banded(P, Q, w, coef):
    """Banded form of diag(w) - coef * A where w_i dm_i/dt = (A m)_i."""
    n = w.size
    ab = np.zeros((3, n))
    diag = np.zeros(n)
    diag[1:] += Q
    diag[:-1] -= P
    ab[1] = w - coef * diag
    ab[0, 1:] = coef * Q
    ab[2, :-1] = -coef * P
    return ab


def _theta(scheme: str) -> float:
    if scheme in ("implicit", "implicit_euler"):
        return 1.0
    if scheme in ("crank_nicolson", "cn"):
        return 0.5
    raise ValueError(f"unknown time scheme {scheme!r}")


def solve_fp_forward(drift: DriftField, sigma: SigmaLike, init: Density,
                     scheme: str = "implicit", mass_tol: float = MASS_TOL) -> DensityFlow:
    grid, mesh = drift.grid, drift.mesh
    _check_same_grid(grid, init.grid)
    s2 = sigma_squared(sigma, grid)
    theta = _theta(scheme)
    h, dt, w = grid.h, mesh.dt, grid.weights
    frames = np.empty((mesh.n_t, grid.n_x))
    frames[0] = init.values
    m = init.values.copy()
    cached_row, ab = None, None
    for k in range(mesh.n_t - 1):
        row = drift.b[k]
        P, Q = _fp_fluxes(row, s2, h)
        if cached_row is None or not np.array_equal(row, cached_row):
            ab = _fp_banded(P, Q, w, theta * dt)
            cached_row = row
        rhs = w * m
        if theta < 1.0:
            rhs = rhs + (1 - theta) * dt * _fp_apply(P, Q, m)
        m = solve_banded((1, 1), ab, rhs)
        np.maximum(m, 0.0, out=m)
        mass = float(w @ m)
        if abs(mass - 1.0) > mass_tol:
            raise MassDrift(k + 1, mass, mass_tol)
        frames[k + 1] = m
    return DensityFlow(grid, mesh, frames)


# -- backward linear HJB -----------------------------------------------------

def _hjb_coeffs(b_row, s2, h):
    """Tridiagonal coefficients (lo, di, up) of L v = b v_x + 1/2 s2 v_xx, upwinded.

    End nodes use the ghost value of a linear extrapolation, so v_xx = 0 there
    and affine functions are reproduced exactly.
    """
    bp, bm = np.maximum(b_row, 0.0), np.minimum(b_row, 0.0)
    d = 0.5 * s2 / h**2
    lo = -bm / h + d
    up = bp / h + d
    di = -bp / h + bm / h - 2 * d
    lo[0] = 0.0
    di[0], up[0] = -b_row[0] / h, b_row[0] / h
    up[-1] = 0.0
    lo[-1], di[-1] = -b_row[-1] / h, b_row[-1] / h
    return lo, di, up


def _tri_apply(lo, di, up, v):
    out = di * v
    out[1:] += lo[1:] * v[:-1]
    out[:-1] += up[:-1] * v[1:]
    return out


def _tri_banded(lo, di, up, coef):
    n = di.size
    ab = np.zeros((3, n))
    ab[1] = 1.0 - coef * di
    ab[0, 1:] = -coef * up[:-1]
    ab[2, :-1] = -coef * lo[1:]
    return ab


def _source_matrix(running_source, grid, mesh):
    if running_source is None:
        return np.zeros((mesh.n_t, grid.n_x))
    if callable(running_source):
        t, x = np.meshgrid(mesh.t, grid.x, indexing="ij")
        return np.broadcast_to(np.asarray(running_source(t, x), dtype=float), t.shape).copy()
    src = np.asarray(running_source, dtype=float)
    return np.broadcast_to(src, (mesh.n_t, grid.n_x)).copy()


def solve_hjb_backward(drift: DriftField, sigma: SigmaLike, running_source, terminal,
                       scheme: str = "implicit") -> ValueField:
    """Solve ``-v_t - b v_x = 1/2 sigma^2 v_xx + f`` backward from ``v(T) = terminal``.

    ``running_source`` is ``f(t, x)`` (vectorised), an ``(n_t, n_x)`` array or None;
    ``terminal`` is a callable of ``x`` or an array of node values.
    """
    grid, mesh = drift.grid, drift.mesh
    s2 = sigma_squared(sigma, grid)
    theta = _theta(scheme)
    src = _source_matrix(running_source, grid, mesh)
    if not np.all(np.isfinite(src)):
        raise ValueError("running source is not finite on the grid")
    vT = terminal(grid.x) if callable(terminal) else terminal
    vT = np.broadcast_to(np.asarray(vT, dtype=float), (grid.n_x,))
    h, dt = grid.h, mesh.dt
    v = np.empty((mesh.n_t, grid.n_x))
    v[-1] = vT
    cached_row, ab = None, None
    for n in range(mesh.n_t - 2, -1, -1):
        row = drift.b[n]
        lo, di, up = _hjb_coeffs(row, s2, h)
        if cached_row is None or not np.array_equal(row, cached_row):
            ab = _tri_banded(lo, di, up, theta * dt)
            cached_row = row
        rhs = v[n + 1] + dt * (theta * src[n] + (1 - theta) * src[n + 1])
        if theta < 1.0:
            rhs = rhs + (1 - theta) * dt * _tri_apply(lo, di, up, v[n + 1])
        v[n] = solve_banded((1, 1), ab, rhs)
    return ValueField(grid, mesh, v)


def hjb_step(v_next: np.ndarray, b_row: np.ndarray, s2: np.ndarray, src_row: np.ndarray,
             h: float, dt: float) -> np.ndarray:
    """One implicit Euler step of the backward linear equation (used by nonlinear sweeps)."""
    lo, di, up = _hjb_coeffs(b_row, s2, h)
    return solve_banded((1, 1), _tri_banded(lo, di, up, dt), v_next + dt * src_row)


def fp_step(m: np.ndarray, b_row: np.ndarray, s2: np.ndarray, grid: SpatialGrid,
            dt: float) -> np.ndarray:
    P, Q = _fp_fluxes(b_row, s2, grid.h)
    out = solve_banded((1, 1), _fp_banded(P, Q, grid.weights, dt), grid.weights * m)
    return np.maximum(out, 0.0, out=out)


def auto_grid(n_x: int, horizon: float, drift_max: float, sigma_max: float,
              support_radius: float = 0.0, margin: float = 6.0) -> SpatialGrid:
    """Symmetric truncation wide enough that boundary mass is negligible."""
    L = support_radius + drift_max * horizon + margin * sigma_max * np.sqrt(horizon)
    return SpatialGrid.symmetric(max(L, 1.0), n_x)
