"""Builders that turn plain dictionaries (parsed config blocks) into model objects."""
from __future__ import annotations

import numpy as np

from .model import BangBang, LinearMean, Local, MfgProblem, QuadraticControl, SmoothCapped, Zero, Kernel
from .numerics import Density, DriftField, SpatialGrid, TimeMesh


def hamiltonian_from(d: dict):
    kind = d.get("type", "bang-bang")
    if kind == "bang-bang":
        return BangBang(float(d.get("a", -1.0)), float(d.get("b", 1.0)))
    if kind == "smooth-capped":
        return SmoothCapped(float(d["delta"]))
    if kind == "quadratic":
        return QuadraticControl(float(d["c0"]))
    raise ValueError(f"unknown hamiltonian type {kind!r}")


def cost_from(d: dict | None):
    if d is None:
        return Zero()
    kind = d.get("type", "zero")
    if kind == "zero":
        return Zero()
    if kind == "linear-mean":
        return LinearMean(float(d["coef"]), float(d.get("offset", 0.0)))
    if kind == "gaussian-kernel":
        amp, scale = float(d.get("amplitude", 1.0)), float(d.get("scale", 1.0))
        return Kernel(lambda x, y: amp * np.exp(-((x - y) ** 2) / (2 * scale * scale)))
    if kind == "local-tanh":
        lip = float(d.get("lipschitz", 1.0))
        return Local(lambda x, m: np.tanh(lip * m), lip)
    raise ValueError(f"unknown cost type {kind!r}")


def density_from(d: dict | None, grid: SpatialGrid) -> Density:
    d = d or {"type": "gaussian"}
    kind = d.get("type", "gaussian")
    if kind == "gaussian":
        return Density.gaussian(grid, float(d.get("mean", 0.0)), float(d.get("var", 0.25)))
    if kind == "uniform":
        return Density.uniform(grid, float(d["lo"]), float(d["hi"]))
    if kind == "bimodal":
        return Density.bimodal(grid, tuple(d.get("centers", (-1.0, 1.0))), float(d.get("var", 0.25)))
    if kind == "point":
        return Density.point_mass(grid, float(d.get("x0", 0.0)))
    raise ValueError(f"unknown init type {kind!r}")


def grid_mesh(horizon: float, n_x: int = 256, n_t: int = 256, half_width: float = 5.0):
    return SpatialGrid.symmetric(half_width, n_x), TimeMesh(horizon, n_t)


def problem_from(problem: dict, numerics: dict | None = None) -> MfgProblem:
    numerics = numerics or {}
    grid, mesh = grid_mesh(float(problem.get("horizon", 1.0)), int(numerics.get("n_x", 256)),
                           int(numerics.get("n_t", 256)), float(numerics.get("half_width", 5.0)))
    return MfgProblem(
        hamiltonian_from(problem.get("hamiltonian", {})),
        float(problem.get("sigma", 1.0)),
        cost_from(problem.get("running_cost")),
        cost_from(problem.get("terminal_cost")),
        density_from(problem.get("init"), grid),
        mesh,
    )


def three_solutions_problem(n_x: int = 256, n_t: int = 256, half_width: float = 5.0) -> MfgProblem:
    """Bang-bang controls in [-1, 1], no running cost, terminal cost ``-x M(mu)``."""
    grid, mesh = grid_mesh(1.0, n_x, n_t, half_width)
    return MfgProblem(BangBang(-1.0, 1.0), 1.0, Zero(), LinearMean(-1.0),
                      Density.gaussian(grid, 0.0, 0.25), mesh)


def terminal_only_problem(mean_init: float, n_x: int = 256, n_t: int = 256,
                          half_width: float = 6.0) -> MfgProblem:
    """No running cost, terminal cost ``-x M(mu)``, initial law centred at ``mean_init``.

    Both explicit branches exist while ``-b T < mean_init < -a T``.
    """
    grid, mesh = grid_mesh(1.0, n_x, n_t, half_width)
    return MfgProblem(BangBang(-1.0, 1.0), 1.0, Zero(), LinearMean(-1.0),
                      Density.gaussian(grid, mean_init, 0.25), mesh)


def imitation_problem(n_x: int = 256, n_t: int = 256) -> MfgProblem:
    """Running and terminal costs both ``-x M(mu)``; used for the optimality probes."""
    grid, mesh = grid_mesh(1.0, n_x, n_t)
    return MfgProblem(BangBang(-1.0, 1.0), 1.0, LinearMean(-1.0), LinearMean(-1.0),
                      Density.gaussian(grid, 0.0, 0.25), mesh)


def linear_mean_problem(alpha: float, beta: float, H=None, sigma: float = 1.0, T: float = 1.0,
                        n_x: int = 128, n_t: int = 128, half_width: float = 5.0,
                        init_var: float = 0.25) -> MfgProblem:
    """``F = alpha x M(mu)``, ``G = beta x M(mu)`` around a centred Gaussian."""
    grid, mesh = grid_mesh(T, n_x, n_t, half_width)
    return MfgProblem(H if H is not None else SmoothCapped(1.0), sigma, LinearMean(alpha),
                      LinearMean(beta), Density.gaussian(grid, 0.0, init_var), mesh)


SAMPLE_DRIFTS = ("constant", "sine", "tanh", "switching", "inward")


def sample_drift(kind: str, grid: SpatialGrid, mesh: TimeMesh, bound: float = 1.0) -> DriftField:
    """A few drift fields with ``sup |b| = bound`` used for density-bound checks."""
    fns = {
        "constant": lambda t, x: np.full_like(x, bound),
        "sine": lambda t, x: bound * np.sin(3 * x + t),
        "tanh": lambda t, x: -bound * np.tanh(4 * x),
        "switching": lambda t, x: bound * np.sign(np.sin(2 * np.pi * t) + 1e-9) * np.ones_like(x),
        "inward": lambda t, x: -bound * np.clip(2 * x, -1, 1),
    }
    if kind not in fns:
        raise ValueError(f"unknown test drift {kind!r}")
    return DriftField.from_function(grid, mesh, fns[kind], (-bound, bound))
