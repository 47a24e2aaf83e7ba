"""Two interacting populations with bang-bang Hamiltonians and linear-mean couplings.

Population ``i`` pays ``F_i = alpha_i x M(m_1) + beta_i x M(m_2) + f_i`` while
running and ``G_i = gamma_i x M(m_1) + delta_i x M(m_2) + g_i`` at the horizon.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .branch_solver import gradient_certificate
from .certifier import Verdict
from .errors import PreconditionFail, SignConditionViolated
from .model import GRAD_TOL, BangBang, Kink
from .numerics import (Density, DensityFlow, DriftField, SigmaLike, SpatialGrid, TimeMesh, ValueField,
                       flow_distance, gradient, hjb_step, sigma_squared, solve_fp_forward,
                       solve_hjb_backward)

COEF_NAMES = ("alpha1", "beta1", "gamma1", "delta1", "alpha2", "beta2", "gamma2", "delta2")


@dataclass(frozen=True)
class Coefficients:
    alpha1: float = 0.0
    beta1: float = 0.0
    gamma1: float = 0.0
    delta1: float = 0.0
    alpha2: float = 0.0
    beta2: float = 0.0
    gamma2: float = 0.0
    delta2: float = 0.0

    @classmethod
    def uniform(cls, value: float) -> "Coefficients":
        return cls(*([float(value)] * 8))

    def running(self, i: int):
        return (self.alpha1, self.beta1) if i == 1 else (self.alpha2, self.beta2)

    def terminal(self, i: int):
        return (self.gamma1, self.delta1) if i == 1 else (self.gamma2, self.delta2)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in COEF_NAMES}


@dataclass(frozen=True, eq=False)
class TwoPopProblem:
    H1: BangBang
    H2: BangBang
    sigma1: SigmaLike
    sigma2: SigmaLike
    coef: Coefficients
    init1: Density
    init2: Density
    mesh: TimeMesh
    offsets: tuple = (0.0, 0.0, 0.0, 0.0)   # f1, f2, g1, g2; never move controls

    def __post_init__(self):
        for H in (self.H1, self.H2):
            if not isinstance(H, BangBang):
                raise TypeError("both populations need bang-bang Hamiltonians")
        if self.init1.grid != self.init2.grid:
            raise ValueError("populations must share a grid")
        sigma_squared(self.sigma1, self.grid)
        sigma_squared(self.sigma2, self.grid)

    @property
    def grid(self) -> SpatialGrid:
        return self.init1.grid

    def H(self, i):
        return self.H1 if i == 1 else self.H2

    def sigma(self, i):
        return self.sigma1 if i == 1 else self.sigma2

    def init(self, i):
        return self.init1 if i == 1 else self.init2

    def running_field(self, i, means1, means2) -> np.ndarray:
        a, b = self.coef.running(i)
        return np.outer(a * means1 + b * means2, self.grid.x) + self.offsets[i - 1]

    def terminal_field(self, i, M1, M2) -> np.ndarray:
        c, d = self.coef.terminal(i)
        return (c * M1 + d * M2) * self.grid.x + self.offsets[i + 1]


@dataclass(eq=False)
class TwoPopSolution:
    values: tuple
    flows: tuple
    drifts: tuple
    certificates: tuple
    seeds: tuple
    residual: float = np.nan

    def means(self):
        return tuple(f.means() for f in self.flows)

    def summary(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "certificates": [c.value for c in self.certificates],
            "mean_T": [float(f.means()[-1]) for f in self.flows],
            "residual": float(self.residual),
        }


# -- coefficient sign conditions ---------------------------------------------

def same_sign_violations(c: Coefficients) -> list:
    """Imitation within and across populations, with a non-vanishing terminal pull."""
    out = []
    for name in COEF_NAMES:
        if getattr(c, name) > 0:
            out.append(f"{name} <= 0")
    for i in (1, 2):
        g, d = c.terminal(i)
        if not g + d < 0:
            out.append(f"gamma{i} + delta{i} < 0")
    return out


def mixed_sign_violations(c: Coefficients) -> list:
    out = []
    for name in ("alpha1", "beta2", "gamma1", "delta2"):
        if getattr(c, name) > 0:
            out.append(f"{name} <= 0")
    for name in ("alpha2", "beta1", "gamma2", "delta1"):
        if getattr(c, name) < 0:
            out.append(f"{name} >= 0")
    if not c.gamma1 < c.delta1:
        out.append("gamma1 < delta1")
    if not c.gamma2 > c.delta2:
        out.append("gamma2 > delta2")
    return out


# -- branch construction -------------------------------------------------------

def _sign(s) -> int:
    if s in (1, "+", "plus", +1.0):
        return 1
    if s in (-1, "-", "minus", -1.0):
        return -1
    raise ValueError(f"bad seed sign {s!r}")


def _kink(sign: int) -> Kink:
    return Kink.MINUS if sign > 0 else Kink.PLUS


def construct_twopop_branch(problem: TwoPopProblem, seeds=(1, 1)) -> TwoPopSolution:
    """Constant extreme drifts per population, then the two linear backward equations."""
    s = tuple(_sign(x) for x in seeds)
    viol = same_sign_violations(problem.coef) if s[0] == s[1] else mixed_sign_violations(problem.coef)
    if viol:
        raise PreconditionFail(viol)
    grid, mesh = problem.grid, problem.mesh
    drifts, flows = [], []
    for i, si in zip((1, 2), s):
        H = problem.H(i)
        level = H.b if si > 0 else H.a
        d = DriftField.constant(grid, mesh, level, H.bounds)
        drifts.append(d)
        flows.append(solve_fp_forward(d, problem.sigma(i), problem.init(i)))
    m1, m2 = flows[0].means(), flows[1].means()
    values, certs = [], []
    for i, si in zip((1, 2), s):
        F = problem.running_field(i, m1, m2)
        G = problem.terminal_field(i, m1[-1], m2[-1])
        v = solve_hjb_backward(drifts[i - 1], problem.sigma(i), F, G)
        inner = v.v_x[:-1]
        bad = inner >= 0 if si > 0 else inner <= 0
        if np.any(bad):
            k, j = np.argwhere(bad)[0]
            raise SignConditionViolated(mesh.t[k], grid.x[j], v.v_x[k, j],
                                        "v_x < 0" if si > 0 else "v_x > 0", population=i)
        values.append(v)
        certs.append(gradient_certificate(v.v_x))
    sol = TwoPopSolution(tuple(values), tuple(flows), tuple(drifts), tuple(certs),
                         tuple("+" if x > 0 else "-" for x in s))
    sol.residual = twopop_residual(problem, sol)
    return sol


def _best_response(problem: TwoPopProblem, i: int, m1: np.ndarray, m2: np.ndarray, kink: Kink):
    grid, mesh = problem.grid, problem.mesh
    H = problem.H(i)
    s2 = sigma_squared(problem.sigma(i), grid)
    F = problem.running_field(i, m1, m2)
    v = np.empty((mesh.n_t, grid.n_x))
    v[-1] = problem.terminal_field(i, m1[-1], m2[-1])
    for n in range(mesh.n_t - 2, -1, -1):
        gam = H.drift(gradient(v[n + 1], grid), kink, GRAD_TOL)
        v[n] = hjb_step(v[n + 1], gam, s2, F[n], grid.h, mesh.dt)
    value = ValueField(grid, mesh, v)
    drift = DriftField(grid, mesh, H.drift(value.v_x, kink, GRAD_TOL), H.bounds)
    flow = solve_fp_forward(drift, problem.sigma(i), problem.init(i))
    return value, drift, flow


def twopop_sweep(problem: TwoPopProblem, flows, kinks=(Kink.ZERO, Kink.ZERO)):
    """Both best responses against the given flows (the two solves are independent)."""
    m1, m2 = flows[0].means(), flows[1].means()
    return [_best_response(problem, i, m1, m2, kinks[i - 1]) for i in (1, 2)]


def twopop_residual(problem: TwoPopProblem, solution: TwoPopSolution) -> float:
    """Sup over time and populations of the d1 defect after one joint sweep."""
    kinks = tuple(_kink(1 if s == "+" else -1) for s in solution.seeds)
    out = twopop_sweep(problem, solution.flows, kinks)
    return max(flow_distance(f, o[2]) for f, o in zip(solution.flows, out))


def shifted_solution(solution: TwoPopSolution, shift: float) -> TwoPopSolution:
    """Same solution with every density translated by ``shift`` (linear interpolation)."""
    flows = []
    for f in solution.flows:
        x = f.grid.x
        frames = np.stack([np.interp(x - shift, x, fr, left=0.0, right=0.0) for fr in f.frames])
        frames /= f.grid.integrate(frames)[:, None]
        flows.append(DensityFlow(f.grid, f.mesh, frames))
    return TwoPopSolution(solution.values, tuple(flows), solution.drifts, solution.certificates,
                          solution.seeds)


# -- matrix criterion -------------------------------------------------------

def _sym_min_eig(M: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def matrices(c: Coefficients, lam: float):
    M1 = np.array([[lam * c.alpha1, lam * c.beta1], [c.alpha2, c.beta2]])
    M2 = np.array([[lam * c.gamma1, lam * c.delta1], [c.gamma2, c.delta2]])
    return M1, M2


def quadform_positive_definite(p: float, q: float, r: float, s: float) -> bool:
    """``[[p, q], [r, s]]`` has a positive definite quadratic form."""
    with np.errstate(over="ignore"):    # huge closed-form lambdas overflow to inf, which fails
        return bool(p > 0 and s > 0 and 4 * p * s > (q + r) ** 2)


def eig_positive_definite(M: np.ndarray) -> bool:
    return _sym_min_eig(M) > 0


def closed_form_lambdas(c: Coefficients) -> list:
    num = 2 * c.alpha1 * c.beta2 - c.beta1 * c.alpha2
    out = []
    for den in (c.beta1 ** 2, c.alpha2 ** 2):
        if den > 0:     # squares of tiny coefficients can underflow
            out.append(num / den)
    return [lam for lam in out if np.isfinite(lam) and lam > 0]


def default_lambda_scan() -> np.ndarray:
    return np.logspace(-3, 3, 101)


@dataclass
class MatrixVerdict:
    verdict: Verdict
    lam: Optional[float] = None
    margin: Optional[float] = None
    pattern: Optional[str] = None
    n_lambda: int = 0

    def as_dict(self) -> dict:
        return {"verdict": self.verdict.value, "lambda": self.lam, "margin": self.margin,
                "pattern": self.pattern, "n_lambda": self.n_lambda}


def _lambda_margin(c: Coefficients, lam: float, psd_tol: float):
    """Scaled definiteness margin at ``lam``, or None when the pair of tests fails."""
    M1, M2 = matrices(c, lam)
    if not quadform_positive_definite(M1[0, 0], M1[0, 1], M1[1, 0], M1[1, 1]):
        return None
    if _sym_min_eig(M2) < -psd_tol:
        return None
    return _sym_min_eig(M1) / (1.0 + lam)


def matrix_uniqueness_check(c: Coefficients, lambda_scan=None, psd_tol: float = 1e-12) -> MatrixVerdict:
    """Search ``lambda > 0`` making the running matrix definite and the terminal one semidefinite.

    A passing closed-form candidate is preferred; otherwise the scan point with the
    largest scaled margin is recorded (ties go to the smaller ``lambda``).
    """
    scan = default_lambda_scan() if lambda_scan is None else np.asarray(lambda_scan, dtype=float)
    closed = sorted(closed_form_lambdas(c))
    lams = sorted(set(float(x) for x in scan if x > 0) | set(closed))
    best = None
    for lam in closed:
        margin = _lambda_margin(c, lam, psd_tol)
        if margin is not None:
            best = (lam, margin)
            break
    if best is None:
        for lam in lams:
            margin = _lambda_margin(c, lam, psd_tol)
            if margin is not None and (best is None or margin > best[1]):
                best = (lam, margin)
    if best is not None:
        return MatrixVerdict(Verdict.UNIQUE, best[0], best[1], n_lambda=len(lams))
    if not same_sign_violations(c):
        return MatrixVerdict(Verdict.MULTIPLE, pattern="same-sign imitation", n_lambda=len(lams))
    if not mixed_sign_violations(c):
        return MatrixVerdict(Verdict.MULTIPLE, pattern="mixed-sign imitation", n_lambda=len(lams))
    return MatrixVerdict(Verdict.UNDETERMINED, n_lambda=len(lams))


def mirrored_coefficients(alpha: float, gamma: float) -> Coefficients:
    """Two uncoupled copies of a single population with running ``alpha`` and terminal ``gamma``."""
    return Coefficients(alpha1=alpha, beta2=alpha, gamma1=gamma, delta2=gamma)
