"""Hamiltonians, cost functionals and problem assembly.

Hamiltonians follow the convention ``H(p) = max_{gamma in Gamma} {-l(gamma) - p gamma}``
so that the optimal feedback drift is ``-H'(v_x)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import KinkWithoutHint
from .numerics import (Density, SigmaLike, SpatialGrid, TimeMesh, gradient, mean_of,
                       sigma_squared)


class Kink(enum.Enum):
    """Which one-sided derivative to use where the gradient vanishes."""

    MINUS = "minus"   # left derivative, -H'(0-) = b
    PLUS = "plus"     # right derivative, -H'(0+) = a
    ZERO = "zero"     # stay put: drift 0 (the symmetric selection)

    @classmethod
    def coerce(cls, value) -> Optional["Kink"]:
        if value is None or isinstance(value, cls):
            return value
        return cls(str(value).lower())


INDETERMINATE = object()
GRAD_TOL = 1e-10


@dataclass(frozen=True)
class BangBang:
    a: float = -1.0
    b: float = 1.0

    def __post_init__(self):
        if not self.a < 0 < self.b:
            raise ValueError("BangBang requires a < 0 < b")

    @property
    def bounds(self):
        return (self.a, self.b)

    def value(self, p):
        p = np.asarray(p, dtype=float)
        return np.where(p <= 0, -self.b * p, -self.a * p)

    def drift(self, p, kink=None, grad_tol: float = 0.0):
        """Optimal drift ``-H'(p)``; ``kink`` resolves ``|p| <= grad_tol``."""
        p = np.asarray(p, dtype=float)
        out = np.where(p < 0, self.b, self.a).astype(float)
        at_kink = np.abs(p) <= grad_tol
        if np.any(at_kink):
            kink = Kink.coerce(kink)
            if kink is None:
                raise KinkWithoutHint("H is not differentiable at p = 0; pass a kink branch")
            out[at_kink] = {Kink.MINUS: self.b, Kink.PLUS: self.a, Kink.ZERO: 0.0}[kink]
        return out

    def running(self, gamma):
        return np.zeros_like(np.asarray(gamma, dtype=float))

    @property
    def drift_sup(self) -> float:
        return max(-self.a, self.b)


@dataclass(frozen=True)
class SmoothCapped:
    """Quadratic near the origin, ``|p|`` outside ``[-delta, delta]``; controls in [-1, 1]."""

    delta: float = 0.1

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("SmoothCapped requires delta > 0")

    a = -1.0
    b = 1.0

    @property
    def bounds(self):
        return (-1.0, 1.0)

    def value(self, p):
        p = np.asarray(p, dtype=float)
        d = self.delta
        return np.where(np.abs(p) <= d, p * p / (2 * d) + d / 2, np.abs(p))

    def drift(self, p, kink=None, grad_tol: float = 0.0):
        p = np.asarray(p, dtype=float)
        return -np.clip(p / self.delta, -1.0, 1.0)

    def running(self, gamma):
        g = np.asarray(gamma, dtype=float)
        return 0.5 * self.delta * (g * g - 1.0)

    drift_sup = 1.0


@dataclass(frozen=True)
class QuadraticControl:
    """Control cost ``c0 gamma^2`` on Gamma = [-1, 1]."""

    c0: float = 1.0

    def __post_init__(self):
        if not self.c0 > 0:
            raise ValueError("QuadraticControl requires c0 > 0")

    a = -1.0
    b = 1.0

    @property
    def bounds(self):
        return (-1.0, 1.0)

    def value(self, p):
        p = np.asarray(p, dtype=float)
        c0 = self.c0
        ap = np.abs(p)
        return -c0 * np.minimum(p * p / (4 * c0 * c0), 1.0) + ap * np.minimum(ap / (2 * c0), 1.0)

    def drift(self, p, kink=None, grad_tol: float = 0.0):
        p = np.asarray(p, dtype=float)
        return -np.clip(p / (2 * self.c0), -1.0, 1.0)

    def running(self, gamma):
        g = np.asarray(gamma, dtype=float)
        return self.c0 * g * g

    drift_sup = 1.0


Hamiltonian = Union[BangBang, SmoothCapped, QuadraticControl]


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def ham_eval(H: Hamiltonian, p):
    return _scalar(H.value(p))


def ham_derivative(H: Hamiltonian, p, branch_hint=None):
    """``H'(p)``; at the bang-bang kink the hint picks the one-sided derivative."""
    if isinstance(H, BangBang):
        p_arr = np.asarray(p, dtype=float)
        hint = Kink.coerce(branch_hint)
        if np.any(p_arr == 0) and hint not in (Kink.MINUS, Kink.PLUS):
            raise KinkWithoutHint("BangBang derivative at p = 0 needs branch_hint MINUS or PLUS")
    return _scalar(-H.drift(p, branch_hint))


def optimal_control(H: Hamiltonian, p):
    """Maximiser of ``-l(gamma) - p gamma``; INDETERMINATE for bang-bang at p = 0."""
    if isinstance(H, BangBang) and np.ndim(p) == 0 and p == 0:
        return INDETERMINATE
    if isinstance(H, BangBang):
        return _scalar(H.drift(p, Kink.ZERO))
    return _scalar(H.drift(p))


def feedback_drift(H: Hamiltonian, p: np.ndarray, kink=None, grad_tol: float = GRAD_TOL):
    """Vectorised optimal drift over a gradient array."""
    return H.drift(p, kink, grad_tol)


def running_control_cost(H: Hamiltonian, gamma):
    return H.running(gamma)


# -- costs ------------------------------------------------------------------

OffsetLike = Union[float, Callable[[Density], float]]


def _offset(offset: OffsetLike, mu: Density) -> float:
    return float(offset(mu)) if callable(offset) else float(offset)


@dataclass(frozen=True)
class Zero:
    def field(self, mu: Density) -> np.ndarray:
        return np.zeros(mu.grid.n_x)


@dataclass(frozen=True)
class LinearMean:
    """``(x, mu) -> coef * x * M(mu) + offset(mu)``; the offset never moves controls."""

    coef: float
    offset: OffsetLike = 0.0

    def field(self, mu: Density) -> np.ndarray:
        return self.coef * mu.grid.x * mean_of(mu) + _offset(self.offset, mu)

    def slope(self, mean: float) -> float:
        return self.coef * mean


@dataclass(frozen=True, eq=False)
class Kernel:
    """``outer(x, r(x), M(mu))`` with ``r(x) = int k(x, y) mu(y) dy``.

    ``k`` is either an ``(n_x, n_x)`` matrix on the grid or a vectorised
    callable ``k(x, y)``.  Without ``outer`` the field is ``r`` itself.
    """

    k: Union[np.ndarray, Callable]
    outer: Optional[Callable] = None

    def matrix(self, grid: SpatialGrid) -> np.ndarray:
        if callable(self.k):
            X, Y = np.meshgrid(grid.x, grid.x, indexing="ij")
            K = np.asarray(self.k(X, Y), dtype=float)
        else:
            K = np.asarray(self.k, dtype=float)
        if K.shape != (grid.n_x, grid.n_x):
            raise ValueError(f"kernel matrix has shape {K.shape}")
        if not np.all(np.isfinite(K)):
            raise ValueError("kernel matrix is not finite")
        return K

    def field(self, mu: Density) -> np.ndarray:
        r = self.matrix(mu.grid) @ (mu.grid.weights * mu.values)
        if self.outer is None:
            return r
        return np.asarray(self.outer(mu.grid.x, r, mean_of(mu)), dtype=float) * np.ones_like(r)

    def l2_bound(self, grid: SpatialGrid) -> float:
        """Squared Hilbert-Schmidt norm, the L2 Lipschitz bound of the identity-outer form."""
        K = self.matrix(grid)
        return float(grid.weights @ (K * K) @ grid.weights)


@dataclass(frozen=True, eq=False)
class Local:
    """``(x, mu) -> F_l(x, mu(x))``."""

    F_l: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dm_bound: Optional[float] = None

    def field(self, mu: Density) -> np.ndarray:
        return np.asarray(self.F_l(mu.grid.x, mu.values), dtype=float) * np.ones(mu.grid.n_x)


CostSpec = Union[Zero, LinearMean, Kernel, Local]


def cost_field(spec: CostSpec, mu: Density) -> np.ndarray:
    return spec.field(mu)


def cost_gradient(spec: CostSpec, mu: Density) -> np.ndarray:
    if isinstance(spec, LinearMean):
        return np.full(mu.grid.n_x, spec.slope(mean_of(mu)))
    if isinstance(spec, Zero):
        return np.zeros(mu.grid.n_x)
    return gradient(spec.field(mu), mu.grid)


def mean_only(spec: CostSpec) -> bool:
    """True when the cost reaches the measure through its mean alone (offsets aside)."""
    return isinstance(spec, (Zero, LinearMean))


# -- problem ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MfgProblem:
    hamiltonian: Hamiltonian
    sigma: SigmaLike
    running_cost: CostSpec
    terminal_cost: CostSpec
    init: Density
    mesh: TimeMesh
    grid: SpatialGrid = field(default=None)

    def __post_init__(self):
        if self.grid is None:
            object.__setattr__(self, "grid", self.init.grid)
        if self.grid != self.init.grid:
            raise ValueError("init density lives on a different grid")
        if not np.isfinite(mean_of(self.init)):
            raise ValueError("initial mean is not finite")

    @property
    def sigma2(self) -> np.ndarray:
        return sigma_squared(self.sigma, self.grid)

    @property
    def bounds(self):
        return self.hamiltonian.bounds

    @property
    def horizon(self) -> float:
        return self.mesh.horizon

    def replace(self, **kw) -> "MfgProblem":
        from dataclasses import replace
        return replace(self, **kw)


# -- structural condition checkers ---------------------------------------

@dataclass
class ConditionReport:
    passed: bool
    max_violation: float
    details: dict = field(default_factory=dict)


def _dx(spec: CostSpec, mu: Density) -> np.ndarray:
    return cost_gradient(spec, mu)


def check_FG2(spec_F: CostSpec, spec_G: CostSpec, samples: Sequence[Density],
              tol: float = 1e-10) -> ConditionReport:
    """Sign condition ``M(mu) D_x F <= 0`` and ``M(mu) D_x G <= 0`` with the not-identically-zero clause."""
    if not any(abs(mean_of(mu)) > 0 for mu in samples):
        raise ValueError("need at least one sample density with nonzero mean")
    worst_F = worst_G = -np.inf
    clause_ok = True
    for mu in samples:
        M = mean_of(mu)
        dF, dG = _dx(spec_F, mu), _dx(spec_G, mu)
        worst_F = max(worst_F, float(np.max(M * dF)))
        worst_G = max(worst_G, float(np.max(M * dG)))
        if abs(M) > tol and np.max(np.abs(dF)) <= tol and np.max(np.abs(dG)) <= tol:
            clause_ok = False
    worst = max(worst_F, worst_G)
    inequality_ok = worst <= tol
    return ConditionReport(
        passed=inequality_ok and clause_ok,
        max_violation=max(worst, 0.0),
        details={"inequality": inequality_ok, "nonzero_clause": clause_ok,
                 "max_M_DxF": worst_F, "max_M_DxG": worst_G, "n_samples": len(samples)},
    )


def g3_epsilon(beta: float, delta: float, a: float, b: float) -> float:
    """Smallest horizon scale for which ``G = -beta x M(mu)`` satisfies the strengthened sign condition."""
    if beta <= 0:
        return np.inf
    return max(delta / (b * beta), delta / (abs(a) * beta))


def check_G3(spec_G: CostSpec, delta: float, epsilon: float, samples: Sequence[Density],
             a: float = -1.0, b: float = 1.0, tol: float = 1e-10) -> ConditionReport:
    """``D_x G <= -delta`` whenever ``M >= eps b`` and ``D_x G >= delta`` whenever ``M <= eps a``."""
    worst = 0.0
    tested = 0
    for mu in samples:
        M = mean_of(mu)
        dG = _dx(spec_G, mu)
        if M >= epsilon * b:
            worst = max(worst, float(np.max(dG + delta)))
            tested += 1
        elif M <= epsilon * a:
            worst = max(worst, float(np.max(delta - dG)))
            tested += 1
    return ConditionReport(passed=tested > 0 and worst <= tol, max_violation=worst,
                           details={"epsilon": epsilon, "tested": tested})


def random_density(grid: SpatialGrid, rng: np.random.Generator, spread: float = None) -> Density:
    """Random Gaussian mixture, kept well inside the grid."""
    L = 0.5 * (grid.x_max - grid.x_min)
    c = 0.5 * (grid.x_max + grid.x_min)
    spread = 0.3 * L if spread is None else spread
    k = rng.integers(1, 4)
    centers = c + rng.uniform(-spread, spread, k)
    sds = rng.uniform(0.05, 0.25, k) * L
    w = rng.dirichlet(np.ones(k))
    vals = sum(wi * np.exp(-0.5 * ((grid.x - ci) / si) ** 2) / si
               for wi, ci, si in zip(w, centers, sds))
    return Density.from_values(grid, vals)


@dataclass
class LipschitzEstimate:
    empirical: float
    analytic: Optional[float] = None


def lipschitz_L2_estimate(spec: CostSpec, grid: SpatialGrid, n_pairs: int = 50, seed: int = 0,
                          derivative: bool = False) -> LipschitzEstimate:
    """Empirical ``max ||F(mu) - F(nu)||^2 / ||mu - nu||^2`` over random pairs.

    A lower bound on the true constant.  ``derivative=True`` measures the x-gradient
    instead (the terminal-cost condition).
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    f = _dx if derivative else cost_field
    best = 0.0
    for _ in range(n_pairs):
        mu, nu = random_density(grid, rng), random_density(grid, rng)
        den = grid.integrate((mu.values - nu.values) ** 2)
        if den <= 0:
            continue
        num = grid.integrate((f(spec, mu) - f(spec, nu)) ** 2)
        best = max(best, float(num / den))
    analytic = None
    if isinstance(spec, Kernel) and spec.outer is None and not derivative:
        analytic = spec.l2_bound(grid)
    elif isinstance(spec, Local) and spec.dm_bound is not None:
        analytic = spec.dm_bound ** 2
    elif isinstance(spec, Zero):
        analytic = 0.0
    return LipschitzEstimate(best, analytic)


def cost_field_frames(spec: CostSpec, grid: SpatialGrid, frames: np.ndarray) -> np.ndarray:
    """``cost_field`` applied to every row of a ``(n_t, n_x)`` density array."""
    frames = np.atleast_2d(frames)
    x = grid.x
    if isinstance(spec, Zero):
        return np.zeros_like(frames)
    if isinstance(spec, LinearMean) and not callable(spec.offset):
        means = grid.integrate(frames * x)
        return spec.coef * np.outer(means, x) + float(spec.offset)
    if isinstance(spec, Kernel):
        r = (frames * grid.weights) @ spec.matrix(grid).T
        if spec.outer is None:
            return r
        means = grid.integrate(frames * x)
        return np.asarray(spec.outer(x[None, :], r, means[:, None]), dtype=float) * np.ones_like(r)
    if isinstance(spec, Local):
        return np.asarray(spec.F_l(x[None, :], frames), dtype=float) * np.ones_like(frames)
    return np.stack([spec.field(Density.from_values(grid, f)) for f in frames])
