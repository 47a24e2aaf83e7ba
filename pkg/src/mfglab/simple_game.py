"""Exact analysis of the quadratic-control game with terminal cost ``-M(mu) x``.

A flow is an equilibrium iff its terminal mean ``M`` solves the scalar
consistency equation

    M(nu) = M - sgn(M) T min(|M| / (2 c0), 1),

so equilibria are enumerated by a piecewise-linear case analysis.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
from scipy.optimize import minimize_scalar

from .model import QuadraticControl
from .numerics import (Density, DriftField, SpatialGrid, TimeMesh, solve_fp_forward,
                       solve_hjb_backward)

TIE_RTOL = 1e-12


class Regime(enum.Enum):
    SMALL = "SmallHorizon"
    CRITICAL = "Critical"
    LARGE = "LargeHorizon"


class Multiplicity(enum.Enum):
    ISOLATED = "Isolated"
    CONTINUUM = "ContinuumMember"


@dataclass(frozen=True)
class SimpleGameSpec:
    c0: float
    sigma: float
    T: float
    mean_init: float
    init: Optional[Density] = None

    def __post_init__(self):
        if not self.c0 > 0:
            raise ValueError("c0 must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


def feedback(M: float, c0: float) -> float:
    return float(np.sign(M) * min(abs(M) / (2 * c0), 1.0))


@dataclass(frozen=True)
class ConsistencyRoot:
    M: float
    feedback: float
    regime: Regime
    multiplicity_note: Multiplicity = Multiplicity.ISOLATED

    def as_dict(self) -> dict:
        return {"M": self.M, "feedback": self.feedback, "regime": self.regime.value,
                "multiplicity": self.multiplicity_note.value}


@dataclass(frozen=True)
class FiniteRoots:
    roots: tuple

    def __len__(self):
        return len(self.roots)

    def values(self) -> List[float]:
        return [r.M for r in self.roots]

    count = property(__len__)


@dataclass(frozen=True)
class Continuum:
    interval: tuple
    isolated: tuple = ()
    regime: Regime = Regime.CRITICAL

    count = float("inf")

    def sample(self, n: int = 41) -> List[ConsistencyRoot]:
        """Members of the continuum on an even grid, plus isolated roots."""
        lo, hi = self.interval
        c0 = hi / 2
        pts = [ConsistencyRoot(float(M), feedback(M, c0), self.regime, Multiplicity.CONTINUUM)
               for M in np.linspace(lo, hi, n)]
        return pts + list(self.isolated)

    def contains(self, M: float) -> bool:
        lo, hi = self.interval
        return lo <= M <= hi


RootSet = Union[FiniteRoots, Continuum]


def _sgn(x: float) -> float:
    return float(np.sign(x))


def consistency_residual(M, spec: SimpleGameSpec):
    M = np.asarray(M, dtype=float)
    out = M - np.sign(M) * spec.T * np.minimum(np.abs(M) / (2 * spec.c0), 1.0) - spec.mean_init
    return float(out) if out.ndim == 0 else out


def _close(u: float, v: float) -> bool:
    return abs(u - v) <= TIE_RTOL * max(1.0, abs(u), abs(v))


def regime_of(spec: SimpleGameSpec) -> Regime:
    if _close(spec.T, 2 * spec.c0):
        return Regime.CRITICAL
    return Regime.SMALL if spec.T < 2 * spec.c0 else Regime.LARGE


def enumerate_roots(spec: SimpleGameSpec) -> RootSet:
    c0, T, m = spec.c0, spec.T, spec.mean_init
    band = 2 * c0
    regime = regime_of(spec)
    cands = []
    # (a) M = 0
    if m == 0:
        cands.append(0.0)
    # (b) 0 < |M| < 2 c0
    continuum = False
    if regime is Regime.CRITICAL:
        continuum = m == 0
    else:
        r = m / (1 - T / band)
        if r != 0 and abs(r) < band and not _close(abs(r), band):
            cands.append(r)
    # (c) |M| >= 2 c0, ties resolved here
    for s in (1.0, -1.0):
        r = m + s * T
        if _sgn(r) == s and (abs(r) >= band or _close(abs(r), band)):
            cands.append(r)
    roots = []
    for r in sorted(cands):
        if roots and _close(r, roots[-1]):
            continue
        roots.append(r)
    for r in roots:
        res = consistency_residual(r, spec)
        assert abs(res) <= 1e-12 * max(1.0, abs(r), T), (r, res)
    if continuum:
        isolated = tuple(ConsistencyRoot(r, feedback(r, c0), regime)
                         for r in roots if abs(r) > band and not _close(abs(r), band))
        return Continuum((-band, band), isolated)
    return FiniteRoots(tuple(ConsistencyRoot(r, feedback(r, c0), regime) for r in roots))


def root_count(spec: SimpleGameSpec) -> float:
    rs = enumerate_roots(spec)
    return float("inf") if isinstance(rs, Continuum) else len(rs)


def value_function(spec: SimpleGameSpec, root, t, x):
    """Cost of the constant feedback for the root's flow, started at ``(t, x)``."""
    M = root.M if isinstance(root, ConsistencyRoot) else float(root)
    c0 = spec.c0
    run = c0 * min(M * M / (4 * c0 * c0), 1.0) - abs(M) * min(abs(M) / (2 * c0), 1.0)
    out = -M * np.asarray(x, dtype=float) + (spec.T - np.asarray(t, dtype=float)) * run
    return float(out) if np.ndim(out) == 0 else out


# -- independent oracle ------------------------------------------------------

def brute_force_roots(spec: SimpleGameSpec, scan_range=None, n_scan: int = 20001,
                      xtol: float = 1e-13) -> List[float]:
    """Scan the residual, bisect every sign change, refine near-tangent minima."""
    R = abs(spec.mean_init) + spec.T + 2 * spec.c0
    lo, hi = scan_range if scan_range is not None else (-1.5 * R - 1.0, 1.5 * R + 1.0)
    xs = np.linspace(lo, hi, n_scan)
    rs = consistency_residual(xs, spec)
    found = list(xs[rs == 0])
    for i in np.nonzero(rs[:-1] * rs[1:] < 0)[0]:
        a, b = xs[i], xs[i + 1]
        fa = rs[i]
        while b - a > xtol * max(1.0, abs(a)):
            mid = 0.5 * (a + b)
            fm = consistency_residual(mid, spec)
            if fm == 0:
                a = b = mid
                break
            if (fm < 0) == (fa < 0):
                a, fa = mid, fm
            else:
                b = mid
        found.append(0.5 * (a + b))
    ar = np.abs(rs)
    dips = (ar[1:-1] < ar[:-2]) & (ar[1:-1] <= ar[2:]) & (rs[:-2] * rs[2:] > 0) & (rs[1:-1] != 0)
    for i in np.nonzero(dips)[0] + 1:
        opt = minimize_scalar(lambda z: abs(consistency_residual(z, spec)),
                              bounds=(xs[i - 1], xs[i + 1]), method="bounded",
                              options={"xatol": 1e-14})
        if abs(consistency_residual(opt.x, spec)) < 1e-12:
            found.append(float(opt.x))
    found.sort()
    out: List[float] = []
    for r in found:
        if out and abs(r - out[-1]) <= 1e-10 * max(1.0, abs(r)):
            continue
        out.append(float(r))
    return out


def continuum_indicator(roots: List[float], c0: float, min_cluster: int = 20) -> bool:
    """A dense run of near-roots filling most of ``[-2 c0, 2 c0]`` signals a continuum."""
    inside = [r for r in roots if abs(r) <= 2 * c0 * (1 + 1e-9)]
    if len(inside) < min_cluster:
        return False
    return (max(inside) - min(inside)) >= 0.9 * 4 * c0


# -- PDE cross-check -----------------------------------------------------------

@dataclass
class CrosscheckReport:
    M: float
    feedback: float
    mean_T: float
    mean_error: float
    control_error: float
    value_error: float
    passed: bool
    notes: list = field(default_factory=list)
    domain: tuple = ()

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("M", "feedback", "mean_T", "mean_error",
                                              "control_error", "value_error", "passed", "notes",
                                              "domain")}


def crosscheck_pde(spec: SimpleGameSpec, root, n_x: int = 256, n_t: int = 256,
                   pde_tol: float = 0.02, control_tol: float = 1e-3) -> CrosscheckReport:
    """Solve the forward and backward equations under the root's constant feedback."""
    if not spec.sigma > 0:
        raise ValueError("PDE cross-check needs sigma > 0")
    M = root.M if isinstance(root, ConsistencyRoot) else float(root)
    alpha = feedback(M, spec.c0)
    notes = []
    init = spec.init
    if init is None:
        L = abs(spec.mean_init) + spec.T + 6 * spec.sigma * np.sqrt(spec.T) + 6.0
        init = Density.gaussian(SpatialGrid.symmetric(L, n_x), spec.mean_init, 1.0)
        notes.append("no init density supplied; used Gaussian(mean_init, 1)")
    grid = init.grid
    mesh = TimeMesh(spec.T, n_t)
    drift = DriftField.constant(grid, mesh, alpha, (-1.0, 1.0))
    flow = solve_fp_forward(drift, spec.sigma, init)
    mean_T = float(flow.means()[-1])
    H = QuadraticControl(spec.c0)
    src = float(H.running(alpha))
    value = solve_hjb_backward(drift, spec.sigma, src, lambda x: -M * x)
    realized = H.drift(value.v_x)
    control_error = float(np.max(np.abs(realized - alpha)))
    T_, X_ = np.meshgrid(mesh.t, grid.x, indexing="ij")
    value_error = float(np.max(np.abs(value.v - value_function(spec, M, T_, X_))))
    m0 = float(init.mean())
    mean_error = abs(mean_T - M) if abs(m0 - spec.mean_init) < 1e-6 else abs(mean_T - (m0 + alpha * spec.T))
    if abs(m0 - spec.mean_init) >= 1e-6:
        notes.append(f"init mean {m0:.6g} differs from mean_init; checked against the init mean")
    passed = mean_error <= pde_tol and control_error <= control_tol
    return CrosscheckReport(M, alpha, mean_T, mean_error, control_error, value_error, passed, notes,
                            (grid.x_min, grid.x_max))


def regime_diagram(c0: float, T_values, mean_values) -> np.ndarray:
    """Root counts over a ``(T, M(nu))`` grid; ``inf`` marks a continuum."""
    out = np.empty((len(T_values), len(mean_values)))
    for i, T in enumerate(T_values):
        for j, m in enumerate(mean_values):
            out[i, j] = root_count(SimpleGameSpec(c0, 0.0, float(T), float(m)))
    return out
