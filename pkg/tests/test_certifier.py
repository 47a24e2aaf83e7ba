from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mfglab import presets
from mfglab.certifier import (DISCREPANCY_NOTE, Monotone, ThresholdInputs, Verdict,
                              applicability_audit, bilinear_form, density_bound_constant,
                              gaussian_exp_integral, gaussian_exp_integral_quad,
                              hamiltonian_bounds, monotonicity_check, regime_verdict,
                              short_time_threshold, threshold_constants, threshold_lhs,
                              verify_density_bound)
from mfglab.errors import DegenerateDiffusion, NoPositiveThreshold
from mfglab.model import (BangBang, Kernel, LinearMean, Local, QuadraticControl, SmoothCapped, Zero,
                          random_density)
from mfglab.numerics import Density, DriftField, SpatialGrid, TimeMesh

# Full bound (sigma = 1, |b| = 1, d = 1) evaluated once with scipy.integrate.quad on the raw
# Gaussian integral instead of the closed form.
C_HAT_QUAD = {0.25: 7.2709108819302495, 0.5: 30.245547521933833, 1.0: 444.39330365409114}


@pytest.fixture(scope="module")
def grid():
    return SpatialGrid.symmetric(6, 241)


# -- monotone regime ---------------------------------------------------------

def test_monotone_linear_mean(grid):
    rep = monotonicity_check(LinearMean(1.0), Zero(), grid, 20, seed=1)
    assert rep.verdict is Monotone.PASS
    np.testing.assert_allclose(rep.F_integrals, rep.F_closed_form, rtol=1e-6)
    assert all(v > 0 for v in rep.F_integrals)
    assert monotonicity_check(LinearMean(-1.0), Zero(), grid, 10).verdict is Monotone.FAIL
    assert monotonicity_check(Zero(), LinearMean(-1.0), grid, 10).verdict is Monotone.FAIL


def test_offset_only_cost_cancels(grid):
    rng = np.random.default_rng(3)
    f = Kernel(lambda x, y: 0 * x + np.sin(y), outer=lambda x, r, M: r + M ** 2)
    for _ in range(10):
        mu, nu = random_density(grid, rng), random_density(grid, rng)
        assert abs(bilinear_form(f, mu, nu)) <= 1e-12


def test_monotone_inconclusive_for_general_costs(grid):
    rep = monotonicity_check(Local(lambda x, m: m, 1.0), Zero(), grid, 10)
    assert rep.verdict is Monotone.INCONCLUSIVE and rep.notes
    with pytest.raises(ValueError):
        monotonicity_check(Zero(), Zero(), grid, 5)


@given(st.floats(-3, 3), st.integers(0, 1000))
def test_bilinear_closed_form(alpha, seed):
    g = SpatialGrid.symmetric(6, 121)
    rng = np.random.default_rng(seed)
    mu, nu = random_density(g, rng), random_density(g, rng)
    dm = mu.mean() - nu.mean()
    assert bilinear_form(LinearMean(alpha), mu, nu) == pytest.approx(alpha * dm * dm, rel=1e-6, abs=1e-14)


def test_regime_verdicts():
    assert regime_verdict(1, 0) is Verdict.UNIQUE
    assert regime_verdict(0, -1) is Verdict.MULTIPLE
    assert regime_verdict(1, -1) is Verdict.UNDETERMINED
    assert regime_verdict(-1, 1) is Verdict.UNDETERMINED


# -- density bound -------------------------------------------------------------

def test_zero_drift_constant_is_one():
    for d in (1, 2, 3):
        assert density_bound_constant(1.3, 0.0, d, 0.7) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("t", sorted(C_HAT_QUAD))
def test_density_constant_against_quadrature_oracle(t):
    assert density_bound_constant(1.0, 1.0, 1, t) == pytest.approx(C_HAT_QUAD[t], rel=1e-10)
    quad = density_bound_constant(1.0, 1.0, 1, t, integral=gaussian_exp_integral_quad)
    assert quad == pytest.approx(C_HAT_QUAD[t], rel=1e-10)


def test_gaussian_integral_closed_form_on_log_grid():
    for c, s in itertools.product(np.logspace(-3, 1, 20), np.logspace(-3, 1, 20)):
        a, b = gaussian_exp_integral(c, s), gaussian_exp_integral_quad(c, s)
        assert a == pytest.approx(b, rel=1e-10), (c, s)


def test_density_constant_monotone():
    ts, bs = np.linspace(0.05, 2, 12), np.linspace(0, 2, 12)
    C = np.array([[density_bound_constant(1.0, b, 1, t) for t in ts] for b in bs])
    assert np.all(np.diff(C, axis=0) >= 0) and np.all(np.diff(C, axis=1) >= 0)
    assert density_bound_constant(1.0, 1.0, 2, 0.5) >= density_bound_constant(1.0, 1.0, 1, 0.5)


def test_density_constant_errors():
    with pytest.raises(DegenerateDiffusion):
        density_bound_constant(0.0, 1.0)
    with pytest.raises(ValueError):
        density_bound_constant(1.0, 1.0, t=0.0)


@pytest.mark.parametrize("kind", presets.SAMPLE_DRIFTS)
@pytest.mark.parametrize("t", [0.25, 0.5, 1.0])
def test_density_bound_holds(kind, t):
    grid, mesh = SpatialGrid.symmetric(6, 256), TimeMesh(t, 128)
    rep = verify_density_bound(presets.sample_drift(kind, grid, mesh, 1.0), 1.0,
                               Density.uniform(grid, -1, 1), drift_bound=1.0)
    assert rep.holds and rep.ratio <= 1.05


def test_density_bound_zero_drift_contracts():
    grid, mesh = SpatialGrid.symmetric(6, 256), TimeMesh(0.5, 64)
    init = Density.gaussian(grid, 0, 0.25)
    rep = verify_density_bound(DriftField.constant(grid, mesh, 0.0), 1.0, init)
    assert rep.C_hat == pytest.approx(1.0) and rep.sup_mt < rep.sup_m0


# -- short-horizon threshold ------------------------------------------------

BASE = dict(L_F=1.0, L_G=1.0, sup_init_density=0.8, C_H=1.0, Cbar_H=1.0)


def test_threshold_brackets_defining_inequality():
    inp = ThresholdInputs(**BASE)
    res = short_time_threshold(inp)
    assert res.T_bar > 0 and not res.exceeds_scan
    assert threshold_lhs(inp, res.T_bar * (1 - 1e-9)) < 1
    assert threshold_lhs(inp, res.T_bar * (1 + 1e-6)) >= 1
    assert res.discrepancy_note == DISCREPANCY_NOTE
    assert res.printed_formula > res.quadratic_root
    c = res.constants
    assert res.quadratic_root == pytest.approx(
        (-c["C_1"] + math.sqrt(c["C_1"] ** 2 + 2 * c["C_2"] / c["C_3"])) / c["C_2"])


def test_threshold_regression():
    # pinned from the bisection itself
    assert short_time_threshold(ThresholdInputs(**BASE)).T_bar == pytest.approx(0.10895904583449467, rel=1e-9)


@pytest.mark.parametrize("name", ["L_F", "L_G", "sup_init_density", "C_H", "Cbar_H"])
def test_threshold_nonincreasing(name):
    prev = math.inf
    for v in (0.25, 0.5, 1.0, 2.0, 4.0):
        T = short_time_threshold(ThresholdInputs(**{**BASE, name: v})).T_bar
        assert 0 < T <= prev
        prev = T


def test_threshold_without_terminal_coupling():
    inp = ThresholdInputs(**{**BASE, "L_G": 0.0})
    res = short_time_threshold(inp)
    c = threshold_constants(inp, res.T_bar)
    assert res.T_bar == pytest.approx(math.sqrt(2 / (c["C_2"] * c["C_3"])), rel=1e-9)
    assert res.uncoupled_quadratic == pytest.approx(res.T_bar, rel=1e-9)
    assert res.uncoupled_improved >= res.uncoupled_quadratic
    assert res.uncoupled_improved_selfconsistent >= res.T_bar


def test_threshold_unbounded_cases():
    assert short_time_threshold(ThresholdInputs(**{**BASE, "Cbar_H": 0.0})).exceeds_scan
    assert short_time_threshold(ThresholdInputs(**{**BASE, "L_F": 0.0, "L_G": 0.0})).T_bar == math.inf
    tiny = short_time_threshold(ThresholdInputs(**{**BASE, "Cbar_H": 1e-6}))
    assert tiny.T_bar > short_time_threshold(ThresholdInputs(**BASE)).T_bar
    with pytest.raises(NoPositiveThreshold):
        short_time_threshold(ThresholdInputs(**{**BASE, "Cbar_H": math.inf}))


def test_threshold_inputs_validation():
    with pytest.raises(ValueError):
        ThresholdInputs(**{**BASE, "L_F": -1.0})
    with pytest.raises(DegenerateDiffusion):
        ThresholdInputs(**BASE, sigma=0.0)


def test_threshold_json_roundtrip():
    import json
    d = short_time_threshold(ThresholdInputs(**{**BASE, "L_F": 0.0, "L_G": 0.0})).as_dict()
    assert json.loads(json.dumps(d))["T_bar"] == "inf"


def test_hamiltonian_bounds():
    assert hamiltonian_bounds(BangBang(-1, 2)) == (2.0, math.inf)
    assert hamiltonian_bounds(SmoothCapped(0.5)) == (1.0, 2.0)
    assert hamiltonian_bounds(QuadraticControl(1.0), K=0.5) == (0.25, 0.5)


# -- audit -----------------------------------------------------------------------

def rows_by_name(problem):
    return {r.hypothesis: r for r in applicability_audit(problem)}


def test_audit_bang_bang(three_problem):
    rows = rows_by_name(three_problem)
    assert rows["DH continuity"].status == "FAIL at p = 0"
    assert rows["L2 Lipschitz terminal gradient"].status == "FAIL/unbounded"
    assert rows["gradient difference square integrable"].status == "UNCHECKED"


def test_audit_smooth_capped():
    rows = rows_by_name(presets.linear_mean_problem(0.0, 0.0))
    assert rows["DH Lipschitz"].status == "PASS"
    assert rows["L2 Lipschitz running cost"].status == "PASS"
