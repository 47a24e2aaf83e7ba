"""Explicit solution branches and damped Picard iteration for the coupled MFG system."""
from __future__ import annotations

import enum
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from .errors import MfgLabError, NoConvergence, NotApplicable, SignConditionViolated
from .model import (GRAD_TOL, Kink, MfgProblem, QuadraticControl, SmoothCapped,
                    cost_field_frames)
from .numerics import (DensityFlow, DriftField, ValueField, flow_distance, gradient, hjb_step,
                       mean_of, solve_fp_forward, solve_hjb_backward)

FP_TOL = 1e-3
SMOOTH_GRAD_TOL = 1e-3


class Certificate(enum.Enum):
    ALL_NEGATIVE = "AllNegative"
    ALL_POSITIVE = "AllPositive"
    MIXED = "Mixed"


@dataclass(frozen=True)
class PlusDrift:
    label = "plus"


@dataclass(frozen=True)
class MinusDrift:
    label = "minus"


@dataclass(frozen=True)
class ZeroDrift:
    label = "zero"


@dataclass(frozen=True, eq=False)
class Custom:
    drift: DriftField
    label: str = "custom"


BranchSeed = Union[PlusDrift, MinusDrift, ZeroDrift, Custom]


@dataclass(eq=False)
class MfgSolution:
    value: ValueField
    flow: DensityFlow
    drift: DriftField
    branch_label: str
    residual: float
    certificate: Certificate
    iterations: int = 0
    history: list = field(default_factory=list)

    def means(self) -> np.ndarray:
        return self.flow.means()

    def summary(self) -> dict:
        return {
            "branch_label": self.branch_label,
            "residual": float(self.residual),
            "certificate": self.certificate.value,
            "mean_T": float(self.flow.means()[-1]),
            "iterations": int(self.iterations),
        }


@dataclass(eq=False)
class BranchCatalog:
    solutions: List[MfgSolution]
    dedup_threshold: float
    diagnostics: list = field(default_factory=list)

    def __len__(self):
        return len(self.solutions)

    def labels(self):
        return [s.branch_label for s in self.solutions]


def seed_kink(seed: BranchSeed) -> Kink:
    if isinstance(seed, PlusDrift):
        return Kink.MINUS
    if isinstance(seed, MinusDrift):
        return Kink.PLUS
    return Kink.ZERO


def seed_drift(problem: MfgProblem, seed: BranchSeed) -> DriftField:
    a, b = problem.bounds
    g, m = problem.grid, problem.mesh
    if isinstance(seed, PlusDrift):
        return DriftField.constant(g, m, b, (a, b))
    if isinstance(seed, MinusDrift):
        return DriftField.constant(g, m, a, (a, b))
    if isinstance(seed, ZeroDrift):
        return DriftField.constant(g, m, 0.0, (a, b))
    drift = seed.drift
    if drift.b.min() < a - 1e-12 or drift.b.max() > b + 1e-12:
        raise ValueError("custom seed drift leaves the control set")
    return drift


def seed_flow(problem: MfgProblem, seed: BranchSeed) -> DensityFlow:
    return solve_fp_forward(seed_drift(problem, seed), problem.sigma, problem.init)


def gradient_certificate(v_x: np.ndarray) -> Certificate:
    """Sign of the stored gradient over all time nodes before the horizon."""
    inner = v_x[:-1]
    if np.max(inner) < 0:
        return Certificate.ALL_NEGATIVE
    if np.min(inner) > 0:
        return Certificate.ALL_POSITIVE
    return Certificate.MIXED


def _first_failure(mask: np.ndarray, value: ValueField):
    k, i = np.argwhere(mask)[0]
    return value.mesh.t[k], value.grid.x[i], value.v_x[k, i]


# -- the best-response map ---------------------------------------------------

def solve_hjb_nonlinear(problem: MfgProblem, flow: DensityFlow, kink=Kink.ZERO,
                        grad_tol: float = GRAD_TOL):
    """Backward sweep of ``-v_t + H(v_x) = 1/2 sigma^2 v_xx + F(x, m(t))``.

    Each step freezes the feedback at the gradient of the later time level and
    solves the resulting linear equation implicitly.  Returns the value field and
    the realised feedback drift (row k evaluated from ``v_x(t_k)``).
    """
    H = problem.hamiltonian
    grid, mesh = problem.grid, problem.mesh
    s2 = problem.sigma2
    F = cost_field_frames(problem.running_cost, grid, flow.frames)
    G = cost_field_frames(problem.terminal_cost, grid, flow.frames[-1:])[0]
    v = np.empty((mesh.n_t, grid.n_x))
    v[-1] = G
    for n in range(mesh.n_t - 2, -1, -1):
        p = gradient(v[n + 1], grid)
        gam = H.drift(p, kink, grad_tol)
        v[n] = hjb_step(v[n + 1], gam, s2, F[n] + H.running(gam), grid.h, mesh.dt)
    value = ValueField(grid, mesh, v)
    drift = DriftField(grid, mesh, H.drift(value.v_x, kink, grad_tol), problem.bounds)
    return value, drift


def mfg_map(problem: MfgProblem, flow_in: DensityFlow, kink_branch=Kink.ZERO):
    """One best-response application: HJB against ``flow_in``, then FP under the feedback."""
    value, drift = solve_hjb_nonlinear(problem, flow_in, Kink.coerce(kink_branch))
    flow_out = solve_fp_forward(drift, problem.sigma, problem.init)
    return value, flow_out, drift


def residual_of(problem: MfgProblem, flow: DensityFlow, kink=Kink.ZERO) -> float:
    _, out, _ = mfg_map(problem, flow, kink)
    return flow_distance(flow, out)


# -- explicit construction --------------------------------------------------

def construct_branch(problem: MfgProblem, seed: BranchSeed, pde_tol: float = 0.02,
                     smooth_grad_tol: float = SMOOTH_GRAD_TOL) -> MfgSolution:
    """Constant extreme drift, forward density, then the linear backward equation.

    The candidate is accepted only if the gradient of the value keeps the sign
    that makes the linear equation coincide with the nonlinear one.
    """
    H = problem.hamiltonian
    if isinstance(H, QuadraticControl):
        raise NotApplicable("explicit branches need a bang-bang or capped Hamiltonian")
    if not isinstance(seed, (PlusDrift, MinusDrift)):
        raise ValueError("construct_branch takes PlusDrift or MinusDrift")
    m0 = mean_of(problem.init)
    if abs(m0) > 1e-8:
        warnings.warn(f"initial mean {m0:.3g} is not zero; branch means will be shifted",
                      stacklevel=2)
    plus = isinstance(seed, PlusDrift)
    drift = seed_drift(problem, seed)
    gamma = float(drift.b[0, 0])
    flow = solve_fp_forward(drift, problem.sigma, problem.init)
    grid = problem.grid
    F = cost_field_frames(problem.running_cost, grid, flow.frames) + H.running(gamma)
    G = cost_field_frames(problem.terminal_cost, grid, flow.frames[-1:])[0]
    value = solve_hjb_backward(drift, problem.sigma, F, G)

    if isinstance(H, SmoothCapped):
        thr = -H.delta + smooth_grad_tol
        bad = value.v_x > thr if plus else value.v_x < -thr
        expected = f"v_x {'<=' if plus else '>='} {'-' if plus else ''}{H.delta:g}"
    else:
        bad = np.zeros_like(value.v_x, dtype=bool)
        bad[:-1] = value.v_x[:-1] >= 0 if plus else value.v_x[:-1] <= 0
        expected = "v_x < 0" if plus else "v_x > 0"
    if np.any(bad):
        t, x, val = _first_failure(bad, value)
        raise SignConditionViolated(t, x, val, expected)

    kink = seed_kink(seed)
    _, out, _ = mfg_map(problem, flow, kink)
    residual = flow_distance(flow, out)
    return MfgSolution(value, flow, drift, seed.label, residual,
                       gradient_certificate(value.v_x))


# -- Picard ----------------------------------------------------------------

def _blend(new: DensityFlow, old: DensityFlow, theta: float) -> DensityFlow:
    frames = theta * new.frames + (1 - theta) * old.frames
    frames /= new.grid.integrate(frames)[:, None]
    return DensityFlow(new.grid, new.mesh, frames)


def picard_solve(problem: MfgProblem, seed_flow: DensityFlow, damping: float = 0.5,
                 max_iter: int = 200, tol: float = FP_TOL, kink=Kink.ZERO,
                 label: str = "picard") -> MfgSolution:
    """Damped fixed-point iteration on the flow.

    Stops at the first iterate whose undamped best response moves it by less
    than ``tol`` in sup-t d1; that iterate, its best-response value and the
    realised drift form the returned solution.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    kink = Kink.coerce(kink)
    flow = seed_flow
    history = []
    for it in range(1, max_iter + 1):
        value, out, drift = mfg_map(problem, flow, kink)
        step = flow_distance(flow, out)
        history.append(step)
        if step < tol:
            return MfgSolution(value, flow, drift, label, step,
                               gradient_certificate(value.v_x), it, history)
        flow = _blend(out, flow, damping)
    raise NoConvergence(max_iter, history[-1])


# -- enumeration --------------------------------------------------------------

def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MFGLAB_THREADS", "1")))
    except ValueError:
        return 1


def random_seeds(problem: MfgProblem, n: int, seed: int = 0) -> List[Custom]:
    """Random drifts: a constant level plus a tanh profile in x, clipped to the control set."""
    rng = np.random.default_rng(seed)
    a, b = problem.bounds
    g, m = problem.grid, problem.mesh
    out = []
    for j in range(n):
        level = rng.uniform(a, b)
        amp = rng.uniform(-0.5, 0.5) * (b - a)
        scale = rng.uniform(0.5, 2.0)
        prof = np.clip(level + amp * np.tanh(g.x / scale), a, b)
        out.append(Custom(DriftField(g, m, np.tile(prof, (m.n_t, 1)), (a, b)), f"random{j}"))
    return out


def enumerate_branches(problem: MfgProblem, n_random: int = 3, seed: int = 0,
                       fp_tol: float = FP_TOL, dedup_threshold: Optional[float] = None,
                       damping: float = 0.5, max_iter: int = 200,
                       threads: Optional[int] = None) -> BranchCatalog:
    """Explicit branches, Picard from the zero seed and random seeds, deduplicated."""
    dedup = 10 * fp_tol if dedup_threshold is None else dedup_threshold
    jobs = [("construct", PlusDrift()), ("construct", MinusDrift()), ("picard", ZeroDrift())]
    jobs += [("picard", s) for s in random_seeds(problem, n_random, seed)]

    def run(job):
        kind, s = job
        try:
            if kind == "construct":
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    return construct_branch(problem, s)
            return picard_solve(problem, seed_flow(problem, s), damping, max_iter, fp_tol,
                                seed_kink(s), label=s.label)
        except MfgLabError as exc:
            return exc

    n_threads = threads or _threads()
    if n_threads > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    catalog, diagnostics = [], []
    for (kind, s), res in zip(jobs, results):
        label = s.label
        if isinstance(res, Exception):
            diagnostics.append({"seed": label, "method": kind, "error": type(res).__name__,
                                "message": str(res)})
            continue
        if res.residual > fp_tol:
            diagnostics.append({"seed": label, "method": kind, "error": "ResidualTooLarge",
                                "message": f"residual {res.residual:.3e} > {fp_tol:g}"})
            continue
        dists = [flow_distance(res.flow, c.flow) for c in catalog]
        if all(d > dedup for d in dists):
            catalog.append(res)
        else:
            j = int(np.argmin(dists))
            diagnostics.append({"seed": label, "method": kind, "duplicate_of": catalog[j].branch_label,
                                "distance": float(dists[j])})
    return BranchCatalog(catalog, dedup, diagnostics)


def reflect_flow(flow: DensityFlow) -> np.ndarray:
    """Frames mirrored in x (exact on a symmetric grid)."""
    return flow.frames[:, ::-1]
