"""Uniqueness and non-uniqueness certificates.

* monotone (crowd-averse) cost checks and the linear-mean regime split,
* the explicit sup-norm growth constant for Fokker-Planck densities with
  bounded drift, plus an empirical check against the solver,
* the short-horizon uniqueness threshold assembled from the energy estimates.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from .errors import DegenerateDiffusion, NoPositiveThreshold
from .model import (BangBang, CostSpec, LinearMean, MfgProblem, QuadraticControl, SmoothCapped, Zero,
                    cost_field, mean_only, random_density)
from .numerics import Density, DriftField, SpatialGrid, mean_of, solve_fp_forward


class Verdict(enum.Enum):
    UNIQUE = "ProvablyUnique"
    MULTIPLE = "ProvablyMultiple"
    UNDETERMINED = "Undetermined"


class Monotone(enum.Enum):
    PASS = "MonotonePass"
    FAIL = "MonotoneFail"
    INCONCLUSIVE = "Inconclusive"


# -- monotone regime -------------------------------------------------------

@dataclass
class MonotonicityReport:
    F_integrals: list
    G_integrals: list
    F_closed_form: list
    G_closed_form: list
    min_F: float
    min_G: float
    verdict: Monotone
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"F_integrals": self.F_integrals, "G_integrals": self.G_integrals,
                "F_closed_form": self.F_closed_form, "G_closed_form": self.G_closed_form,
                "min_F": self.min_F, "min_G": self.min_G, "verdict": self.verdict.value,
                "notes": self.notes}


def bilinear_form(spec: CostSpec, mu: Density, nu: Density) -> float:
    """``int (C(x, mu) - C(x, nu)) d(mu - nu)(x)``."""
    diff = cost_field(spec, mu) - cost_field(spec, nu)
    return float(mu.grid.integrate(diff * (mu.values - nu.values)))


def _closed(spec: CostSpec, mu, nu):
    if isinstance(spec, LinearMean):
        return spec.coef * (mean_of(mu) - mean_of(nu)) ** 2
    if isinstance(spec, Zero):
        return 0.0
    return None


def monotonicity_check(F: CostSpec, G: CostSpec, grid: SpatialGrid, n_pairs: int = 20,
                       seed: int = 0, tol: float = 1e-10) -> MonotonicityReport:
    if n_pairs < 10:
        raise ValueError("use at least 10 density pairs")
    rng = np.random.default_rng(seed)
    fi, gi, fc, gc = [], [], [], []
    while len(fi) < n_pairs:
        mu, nu = random_density(grid, rng), random_density(grid, rng)
        if abs(mean_of(mu) - mean_of(nu)) < 1e-3:
            continue
        fi.append(bilinear_form(F, mu, nu))
        gi.append(bilinear_form(G, mu, nu))
        fc.append(_closed(F, mu, nu))
        gc.append(_closed(G, mu, nu))
    notes = []
    if min(fi) < -tol or min(gi) < -tol:
        verdict = Monotone.FAIL
    elif mean_only(F) and mean_only(G) and min(fi) > tol:
        verdict = Monotone.PASS
    else:
        verdict = Monotone.INCONCLUSIVE
        if not (mean_only(F) and mean_only(G)):
            notes.append("costs depend on more than the mean; structural hypotheses not checked")
        if min(fi) <= tol:
            notes.append("running-cost form not strictly positive on sampled pairs")
    return MonotonicityReport(fi, gi, fc, gc, float(min(fi)), float(min(gi)), verdict, notes)


def regime_verdict(alpha: float, beta: float) -> Verdict:
    """Linear-mean costs ``alpha x M`` (running) and ``beta x M`` (terminal)."""
    if alpha > 0 and beta >= 0:
        return Verdict.UNIQUE
    if alpha <= 0 and beta < 0:
        return Verdict.MULTIPLE
    return Verdict.UNDETERMINED


# -- density growth bound ----------------------------------------------------

def _exp(x: float) -> float:
    return math.exp(x) if x < 700 else math.inf


def _mul(*xs) -> float:
    """Product with the convention ``0 * inf = 0`` (a vanishing coefficient wins)."""
    if any(x == 0 for x in xs):
        return 0.0
    return math.prod(xs)


def gaussian_exp_integral(c: float, s: float) -> float:
    """``int exp(c |x|) p_s(x) dx`` for the centred Gaussian of variance ``s``."""
    return 2.0 * _exp(0.5 * c * c * s) * float(ndtr(c * math.sqrt(s)))


def gaussian_exp_integral_quad(c: float, s: float) -> float:
    """Adaptive quadrature of the same integral (independent check)."""
    peak = c * s
    hi = peak + 40.0 * math.sqrt(s)
    norm = 1.0 / math.sqrt(2 * math.pi * s)
    shift = 0.5 * c * c * s

    def f(y):
        return math.exp(c * y - y * y / (2 * s) - shift)

    val, _ = integrate.quad(f, 0.0, hi, points=[peak] if 0 < peak < hi else None,
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return 2.0 * norm * val * math.exp(shift)


def density_bound_constant(sigma: float, drift_bound: float, d: int = 1, t: float = 1.0,
                           integral=gaussian_exp_integral) -> float:
    """Factor bounding ``sup m_t / sup m_0`` over all drifts with ``|b| <= drift_bound``.

    For ``d > 1`` the Gaussian integral of ``exp(c |x|)`` is replaced by the
    product of one-dimensional integrals, an upper bound since ``|x| <= sum |x_i|``.
    Pass ``integral=gaussian_exp_integral_quad`` for the quadrature variant.
    """
    if not sigma > 0:
        raise DegenerateDiffusion("the density bound needs sigma > 0")
    if not t > 0:
        raise ValueError("t must be positive")
    b, s2 = float(drift_bound), sigma * sigma
    pre = (_exp(8 * b * b * t / s2)
           + _mul(4 * b / sigma, math.sqrt(2 * math.pi * t), _exp(16 * b * b * t / s2))) ** (d / 4)
    gauss = integral(b / s2, s2 * t) ** d
    return pre * _exp(b * b * t / (2 * s2)) * gauss


@dataclass
class DensityBoundReport:
    t: float
    sup_m0: float
    sup_mt: float
    C_hat: float
    ratio: float
    slack: float
    holds: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def verify_density_bound(drift: DriftField, sigma: float, init: Density, t: Optional[float] = None,
                         drift_bound: Optional[float] = None, slack: float = 0.05) -> DensityBoundReport:
    """Solve forward to ``t`` (the drift's mesh horizon) and compare sup norms."""
    if callable(sigma):
        raise ValueError("the density bound check needs constant sigma")
    t = drift.mesh.horizon if t is None else t
    if abs(t - drift.mesh.horizon) > 1e-12:
        raise ValueError("t must equal the drift mesh horizon")
    bound = drift.sup() if drift_bound is None else drift_bound
    flow = solve_fp_forward(drift, sigma, init)
    s0, st = float(init.values.max()), float(flow.frames[-1].max())
    C = density_bound_constant(sigma, bound, 1, t)
    ratio = st / (C * s0)
    return DensityBoundReport(t, s0, st, C, ratio, slack, st <= C * s0 * (1 + slack))


# -- short-horizon threshold --------------------------------------------------

@dataclass(frozen=True)
class ThresholdInputs:
    L_F: float
    L_G: float
    sup_init_density: float
    C_H: float
    Cbar_H: float
    sigma: float = math.sqrt(2.0)
    d: int = 1
    T_max_scan: float = 1e3

    def __post_init__(self):
        for k in ("L_F", "L_G", "sup_init_density", "C_H", "Cbar_H", "T_max_scan"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be nonnegative")
        if not self.sigma > 0:
            raise DegenerateDiffusion("sigma must be positive")


def threshold_constants(inp: ThresholdInputs, T: float) -> dict:
    d, CH = inp.d, inp.C_H
    c_o = d * (CH + 3) / 2
    c_1 = (CH + 3) / 2
    C_hat = density_bound_constant(inp.sigma, CH, d, T) if T > 0 else 1.0
    A = _mul(C_hat, inp.sup_init_density, inp.Cbar_H)
    e_o = _exp(c_o * CH * T)
    C1 = _mul(inp.L_G, e_o)
    C2 = _mul(c_o, inp.L_F, e_o)
    C3 = _mul(c_1, _exp(c_1 * CH * T), A, A)
    return {"c_o": c_o, "c_1": c_1, "C_1": C1, "C_2": C2, "C_3": C3, "C_hat_T": C_hat, "A": A}


def threshold_lhs(inp: ThresholdInputs, T: float) -> float:
    """``T C1 C3 + T^2 C2 C3 / 2`` with constants frozen at ``T``."""
    c = threshold_constants(inp, T)
    return _mul(T, c["C_1"], c["C_3"]) + _mul(0.5 * T * T, c["C_2"], c["C_3"])


def _bisect_sup(pred, T_max: float, rtol: float = 1e-13):
    """``sup{T in (0, T_max] : pred(T)}`` for a predicate true near 0 and monotone."""
    if pred(T_max):
        return math.inf
    hi = T_max
    lo = T_max / 2
    while not pred(lo):
        hi = lo
        lo /= 2
        if lo < 1e-12:
            return None
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class ThresholdResult:
    T_bar: float
    constants: dict
    discrepancy_note: str
    quadratic_root: float
    printed_formula: float
    exceeds_scan: bool
    uncoupled_quadratic: Optional[float] = None
    uncoupled_improved: Optional[float] = None
    uncoupled_improved_selfconsistent: Optional[float] = None
    inputs: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        def clean(v):
            if isinstance(v, float) and math.isinf(v):
                return "inf"
            return v
        out = {k: clean(v) for k, v in self.__dict__.items() if k not in ("constants", "inputs")}
        out["constants"] = {k: clean(v) for k, v in self.constants.items()}
        out["inputs"] = {k: clean(v) for k, v in self.inputs.items()}
        return out


DISCREPANCY_NOTE = (
    "The printed closed form (C1 + sqrt(C1^2 + 2 C2/C3))/C2 is not the positive root of "
    "T C1 C3 + T^2 C2 C3 / 2 = 1, which is (-C1 + sqrt(C1^2 + 2 C2/C3))/C2. Since the "
    "constants grow with T, T_bar is computed by bisection on the inequality with constants "
    "frozen at each trial T; both closed forms are reported at the returned T_bar."
)


def short_time_threshold(inp: ThresholdInputs) -> ThresholdResult:
    T_bar = _bisect_sup(lambda T: threshold_lhs(inp, T) < 1.0, inp.T_max_scan)
    if T_bar is None:
        raise NoPositiveThreshold("the defining inequality fails for every T down to 1e-12")
    exceeds = math.isinf(T_bar)
    T_eval = inp.T_max_scan if exceeds else T_bar
    c = threshold_constants(inp, T_eval)
    C1, C2, C3 = c["C_1"], c["C_2"], c["C_3"]
    if C2 > 0 and C3 > 0:
        disc = math.sqrt(C1 * C1 + 2 * C2 / C3)
        root = (-C1 + disc) / C2
        printed = (C1 + disc) / C2
    elif C1 > 0 and C3 > 0:
        root = printed = 1.0 / (C1 * C3)
    else:
        root = printed = math.inf
    res = ThresholdResult(T_bar, c, DISCREPANCY_NOTE, root, printed, exceeds,
                          inputs=dict(inp.__dict__))
    if inp.L_G == 0:
        if C2 > 0 and C3 > 0:
            res.uncoupled_quadratic = math.sqrt(2 / (C2 * C3))
            res.uncoupled_improved = math.pi / (2 * math.sqrt(C2 * C3))
        else:
            res.uncoupled_quadratic = res.uncoupled_improved = math.inf

        def improved(T):
            k = threshold_constants(inp, T)
            return _mul(T, math.sqrt(_mul(k["C_2"], k["C_3"]))) < math.pi / 2

        sc = _bisect_sup(improved, inp.T_max_scan)
        res.uncoupled_improved_selfconsistent = math.inf if sc is None else sc
    return res


def hamiltonian_bounds(H, K: Optional[float] = None) -> tuple:
    """``(C_H, Cbar_H)``: sup of ``|H'|`` and the Lipschitz constant of ``H'``."""
    if isinstance(H, BangBang):
        return H.drift_sup, math.inf
    if isinstance(H, SmoothCapped):
        return 1.0 if K is None else min(1.0, K / H.delta), 1.0 / H.delta
    if isinstance(H, QuadraticControl):
        return 1.0 if K is None else min(1.0, K / (2 * H.c0)), 1.0 / (2 * H.c0)
    raise TypeError(type(H))


# -- applicability audit -----------------------------------------------------

@dataclass
class AuditRow:
    hypothesis: str
    status: str
    detail: str = ""

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _lipschitz_row(name: str, spec: CostSpec, grid: SpatialGrid, derivative: bool) -> AuditRow:
    from .model import lipschitz_L2_estimate

    if isinstance(spec, Zero):
        return AuditRow(name, "PASS", "constant 0")
    if isinstance(spec, LinearMean):
        if spec.coef == 0:
            return AuditRow(name, "PASS", "x-independent cost")
        return AuditRow(name, "FAIL/unbounded",
                        "linear-in-x cost differences are not square integrable on the line")
    est = lipschitz_L2_estimate(spec, grid, 20, derivative=derivative)
    if est.analytic is not None:
        return AuditRow(name, "PASS", f"analytic bound {est.analytic:.6g}, empirical {est.empirical:.6g}")
    return AuditRow(name, "EMPIRICAL", f"empirical lower bound {est.empirical:.6g}")


def applicability_audit(problem: MfgProblem) -> list:
    """Hypothesis-by-hypothesis table for the short-horizon uniqueness result."""
    H = problem.hamiltonian
    rows = []
    if isinstance(H, BangBang):
        rows.append(AuditRow("DH continuity", "FAIL at p = 0",
                             f"H' jumps from {-H.b:g} to {-H.a:g}"))
        rows.append(AuditRow("DH Lipschitz", "FAIL", "H' is discontinuous"))
    else:
        CH, CbarH = hamiltonian_bounds(H)
        rows.append(AuditRow("DH continuity", "PASS", "H is C^1"))
        rows.append(AuditRow("DH Lipschitz", "PASS", f"Lipschitz constant {CbarH:g}"))
        rows.append(AuditRow("H twice differentiable", "FAIL (C^1,1 relaxation applies)",
                             "H'' jumps where the control saturates"))
    rows.append(AuditRow("DH bounded", "PASS", f"|H'| <= {H.drift_sup:g}"))
    rows.append(_lipschitz_row("L2 Lipschitz running cost", problem.running_cost, problem.grid, False))
    rows.append(_lipschitz_row("L2 Lipschitz terminal gradient", problem.terminal_cost, problem.grid, True))
    rows.append(AuditRow("bounded initial density", "PASS",
                         f"sup nu = {float(problem.init.values.max()):.6g}"))
    rows.append(AuditRow("gradient difference square integrable", "UNCHECKED",
                         "cannot be certified on a truncated domain"))
    return rows
