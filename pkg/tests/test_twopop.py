from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mfglab import presets
from mfglab.branch_solver import FP_TOL, Certificate, residual_of
from mfglab.certifier import Verdict, regime_verdict
from mfglab.errors import PreconditionFail, SignConditionViolated
from mfglab.model import BangBang, Kink, LinearMean, MfgProblem
from mfglab.numerics import Density
from mfglab.twopop import (Coefficients, TwoPopProblem, closed_form_lambdas, construct_twopop_branch,
                           default_lambda_scan, eig_positive_definite, matrix_uniqueness_check,
                           mirrored_coefficients, mixed_sign_violations, quadform_positive_definite,
                           same_sign_violations, shifted_solution, twopop_residual)

H1, H2 = BangBang(-1.0, 1.0), BangBang(-0.5, 2.0)
MIXED = Coefficients(alpha1=-1, beta1=0.5, gamma1=-1, delta1=1, alpha2=0.5, beta2=-1, gamma2=1, delta2=-1)


def make_problem(coef, n_x=256, n_t=256, sigma=(1.0, 1.0)):
    grid, mesh = presets.grid_mesh(1.0, n_x, n_t, 6.0)
    return TwoPopProblem(H1, H2, sigma[0], sigma[1], coef, Density.gaussian(grid, 0, 0.25),
                         Density.gaussian(grid, 0, 0.5), mesh)


@pytest.fixture(scope="module")
def imitation():
    return make_problem(Coefficients.uniform(-1.0))


@pytest.fixture(scope="module")
def pp(imitation):
    return construct_twopop_branch(imitation, (1, 1))


def test_same_sign_branches(imitation, pp):
    mm = construct_twopop_branch(imitation, ("-", "-"))
    t = imitation.mesh.t
    m1, m2 = pp.means()
    assert np.abs(m1 - H1.b * t).max() <= 0.02 and np.abs(m2 - H2.b * t).max() <= 0.02
    m1, m2 = mm.means()
    assert np.abs(m1 - H1.a * t).max() <= 0.02 and np.abs(m2 - H2.a * t).max() <= 0.02
    assert pp.certificates == (Certificate.ALL_NEGATIVE, Certificate.ALL_NEGATIVE)
    assert mm.certificates == (Certificate.ALL_POSITIVE, Certificate.ALL_POSITIVE)
    assert pp.residual <= FP_TOL and mm.residual <= FP_TOL
    assert pp.summary()["seeds"] == ["+", "+"]


def test_mixed_branch_certificates():
    p = make_problem(MIXED, 128, 128)
    sol = construct_twopop_branch(p, ("+", "-"))
    assert sol.certificates == (Certificate.ALL_NEGATIVE, Certificate.ALL_POSITIVE)
    assert sol.residual <= FP_TOL


def test_preconditions():
    zero = make_problem(Coefficients(), 64, 32)
    with pytest.raises(PreconditionFail) as info:
        construct_twopop_branch(zero, (1, 1))
    assert "gamma1 + delta1 < 0" in info.value.violated
    with pytest.raises(PreconditionFail):
        construct_twopop_branch(zero, (1, -1))
    with pytest.raises(PreconditionFail):
        construct_twopop_branch(make_problem(Coefficients.uniform(-1.0), 64, 32), (1, -1))
    with pytest.raises(ValueError):
        construct_twopop_branch(zero, (1, 0))


def test_sign_violation_reports_population():
    # coefficient conditions hold, but population 2 starts at -3 and ends at mean -1, which
    # cancels population 1's terminal mean 1; the terminal pull on population 2 then vanishes
    p = make_problem(Coefficients.uniform(-1.0), 128, 64)
    p = TwoPopProblem(p.H1, p.H2, 1.0, 1.0, p.coef, p.init1,
                      Density.gaussian(p.grid, -3.0, 0.25), p.mesh)
    with pytest.raises(SignConditionViolated) as info:
        construct_twopop_branch(p, (1, 1))
    assert info.value.population in (1, 2)


def test_condition_lists():
    assert same_sign_violations(Coefficients.uniform(-1.0)) == []
    assert mixed_sign_violations(MIXED) == []
    assert "alpha1 <= 0" in same_sign_violations(Coefficients(alpha1=1, gamma1=-1, delta2=-1))
    assert "gamma2 > delta2" in mixed_sign_violations(Coefficients(gamma1=-1, delta1=1))


def test_shifted_flow_residual(imitation, pp):
    assert twopop_residual(imitation, shifted_solution(pp, 0.1)) > 10 * FP_TOL


def test_decoupled_residual_is_max_of_single(pp):
    coef = mirrored_coefficients(-1.0, -1.0)
    p = make_problem(coef, 128, 64)
    sol = shifted_solution(construct_twopop_branch(p, (1, 1)), 0.05)
    singles = []
    for H, init, flow in ((p.H1, p.init1, sol.flows[0]), (p.H2, p.init2, sol.flows[1])):
        q = MfgProblem(H, 1.0, LinearMean(-1.0), LinearMean(-1.0), init, p.mesh)
        singles.append(residual_of(q, flow, Kink.MINUS))
    assert twopop_residual(p, sol) == pytest.approx(max(singles), rel=1e-10, abs=1e-14)


# -- matrix criterion -------------------------------------------------------

def test_matrix_diagonal_unique():
    v = matrix_uniqueness_check(Coefficients(alpha1=1, beta2=1))
    assert v.verdict is Verdict.UNIQUE and v.lam == pytest.approx(1.0)


def test_matrix_closed_form_lambda():
    c = Coefficients(alpha1=2, beta1=1, alpha2=1, beta2=2, gamma1=1, delta2=0.5)
    assert closed_form_lambdas(c) == [7.0, 7.0]
    v = matrix_uniqueness_check(c)
    assert v.verdict is Verdict.UNIQUE and v.lam == 7.0


def test_matrix_multiple_patterns():
    v = matrix_uniqueness_check(Coefficients.uniform(-1.0))
    assert v.verdict is Verdict.MULTIPLE and v.pattern == "same-sign imitation"
    v = matrix_uniqueness_check(MIXED)
    assert v.verdict is Verdict.MULTIPLE and v.pattern == "mixed-sign imitation"
    assert matrix_uniqueness_check(Coefficients(alpha1=1, gamma1=-1)).verdict is Verdict.UNDETERMINED


coef_strategy = st.builds(Coefficients, *[st.floats(-3, 3) for _ in range(8)])


@given(coef_strategy)
def test_scan_order_independent(c):
    scan = default_lambda_scan()
    a = matrix_uniqueness_check(c, scan)
    b = matrix_uniqueness_check(c, scan[::-1])
    assert a.as_dict() == b.as_dict()


def test_quadform_matches_eigen_test():
    rng = np.random.default_rng(7)
    for p, q, r, s in rng.normal(size=(1000, 4)):
        assert quadform_positive_definite(p, q, r, s) == eig_positive_definite(np.array([[p, q], [r, s]]))


# the semidefinite test tolerates eigenvalues down to -1e-12, so stay clear of that band
signed = st.one_of(st.just(0.0), st.floats(1e-9, 3), st.floats(-3, -1e-9))


@given(signed, signed)
def test_reduces_to_single_population_verdict(alpha, gamma):
    assert matrix_uniqueness_check(mirrored_coefficients(alpha, gamma)).verdict is regime_verdict(alpha, gamma)
