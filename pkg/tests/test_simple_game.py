from __future__ import annotations

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from mfglab.simple_game import (Continuum, FiniteRoots, Multiplicity, Regime, SimpleGameSpec,
                                brute_force_roots, consistency_residual, continuum_indicator,
                                crosscheck_pde, enumerate_roots, feedback, regime_diagram,
                                regime_of, root_count, value_function)


def spec(c0, T, m, sigma=0.0):
    return SimpleGameSpec(c0, sigma, T, m)


def random_noncritical(rng, n):
    out = []
    while len(out) < n:
        c0, T, m = rng.uniform(0.1, 3.0), rng.uniform(0.05, 10.0), rng.uniform(-10.0, 10.0)
        if abs(T - 2 * c0) >= 1e-9:
            out.append(spec(c0, T, m))
    return out


def test_consistency_residual_examples():
    assert consistency_residual(0.0, spec(1, 1, 0)) == 0.0
    assert consistency_residual(4.0, spec(1, 4, 0)) == 0.0
    assert consistency_residual(1.0, spec(1, 1, 0.5)) == 0.0


@pytest.mark.parametrize("T, m, expected", [
    (1.0, 0.0, [0.0]),
    (4.0, 0.0, [-4.0, 0.0, 4.0]),
    (3.0, 1.0, [-2.0, 4.0]),
])
def test_enumerate_roots_examples(T, m, expected):
    rs = enumerate_roots(spec(1.0, T, m))
    assert isinstance(rs, FiniteRoots)
    assert rs.values() == pytest.approx(expected, abs=1e-9)


def test_critical_horizon_is_a_continuum():
    rs = enumerate_roots(spec(1.0, 2.0, 0.0))
    assert isinstance(rs, Continuum) and rs.interval == (-2.0, 2.0)
    assert root_count(spec(1.0, 2.0, 0.0)) == float("inf")
    for r in rs.sample(33):
        assert r.multiplicity_note is Multiplicity.CONTINUUM
        assert abs(consistency_residual(r.M, spec(1.0, 2.0, 0.0))) <= 1e-12
    assert rs.contains(1.3) and not rs.contains(2.5)


def test_critical_horizon_nonzero_mean():
    # T = 2 c0, M(nu) != 0: the band equation has no solution; only the outer roots remain
    rs = enumerate_roots(spec(1.0, 2.0, 0.5))
    assert isinstance(rs, FiniteRoots) and rs.values() == pytest.approx([2.5])


def test_regimes():
    assert regime_of(spec(1, 1, 0)) is Regime.SMALL
    assert regime_of(spec(1, 2, 0)) is Regime.CRITICAL
    assert regime_of(spec(1, 4, 0)) is Regime.LARGE


def test_spec_invariants():
    for args in ((0.0, 0.0, 1.0, 0.0), (1.0, 0.0, 0.0, 0.0), (1.0, -1.0, 1.0, 0.0)):
        with pytest.raises(ValueError):
            SimpleGameSpec(*args)


@given(st.floats(0.1, 3.0), st.floats(0.05, 10.0), st.floats(-10.0, 10.0))
def test_roots_solve_the_consistency_equation(c0, T, m):
    s = spec(c0, T, m)
    rs = enumerate_roots(s)
    if isinstance(rs, Continuum):
        return
    vals = rs.values()
    assert 1 <= len(vals) <= 3 and vals == sorted(vals)
    for r in rs.roots:
        assert abs(consistency_residual(r.M, s)) <= 1e-12 * max(1.0, abs(r.M), T)
        assert abs(r.feedback) <= 1.0
        assert r.feedback == feedback(r.M, c0)


def test_oracle_equivalence():
    rng = np.random.default_rng(20240601)
    for s in random_noncritical(rng, 200):
        got = enumerate_roots(s).values()
        ref = brute_force_roots(s)
        assert len(got) == len(ref), (s, got, ref)
        assert np.allclose(got, ref, atol=1e-9, rtol=0), (s, got, ref)


@given(st.floats(0.2, 3.0), st.floats(0.05, 8.0), st.floats(-8.0, 8.0))
def test_oracle_equivalence_property(c0, T, m):
    assume(abs(T - 2 * c0) >= 1e-6)
    s = spec(c0, T, m)
    got = enumerate_roots(s).values()
    ref = brute_force_roots(s)
    # tangent pairs closer than the scan spacing are not resolvable by the scan
    assume(abs(abs(m) - (T - 2 * c0)) > 1e-3)
    assert np.allclose(got, ref, atol=1e-9, rtol=0) and len(got) == len(ref)


def test_oracle_flags_continuum():
    near = brute_force_roots(spec(1.0, 2.0, 0.0))
    assert continuum_indicator(near, 1.0)
    assert not continuum_indicator(brute_force_roots(spec(1.0, 4.0, 0.0)), 1.0)


def test_small_horizon_limit():
    assert brute_force_roots(spec(1.0, 1e-9, 0.7)) == pytest.approx([0.7], abs=1e-8)
    assert enumerate_roots(spec(1.0, 1e-9, 0.7)).values() == pytest.approx([0.7], abs=1e-8)


def expected_count(T, m, c0=1.0):
    if T < 2 * c0:
        return 1
    gap = T - 2 * c0
    if abs(abs(m) - gap) <= 1e-12 * max(1.0, T):
        return 2
    return 3 if abs(m) < gap else 1


def test_count_law_on_grid():
    Ts = np.linspace(0.1, 5.0, 50)
    ms = np.linspace(-3.0, 3.0, 50)
    counts = regime_diagram(1.0, Ts, ms)
    for i, T in enumerate(Ts):
        for j, m in enumerate(ms):
            if abs(T - 2.0) < 1e-12:
                continue
            assert counts[i, j] == expected_count(T, m), (T, m)


def test_band_root_excluded_near_critical():
    eps = 0.01
    for T in (1.9, 1.99, 1.999):
        s = spec(1.0, T, eps)
        band = eps / (1 - T / 2)
        vals = enumerate_roots(s).values()
        if abs(band) >= 2:
            assert all(abs(v - band) > 1e-9 for v in vals if abs(v) < 2)
            assert vals == pytest.approx([eps + T])
        else:
            assert vals == pytest.approx([band])


def test_value_function_examples():
    s = spec(1.0, 4.0, 0.0)
    assert value_function(s, 0.0, 0.3, 1.7) == 0.0
    assert value_function(s, 2.0, 0.0, 0.0) == pytest.approx(-4.0)
    xs = np.linspace(-2, 2, 9)
    vals = value_function(s, 1.5, 0.5, xs)
    np.testing.assert_allclose(np.diff(vals) / np.diff(xs), -1.5)


@pytest.mark.parametrize("M", [4.0, -4.0])
def test_crosscheck_large_roots(M):
    s = spec(1.0, 4.0, 0.0, sigma=0.5)
    rep = crosscheck_pde(s, M)
    assert rep.passed, rep.as_dict()
    assert rep.mean_T == pytest.approx(M, abs=0.02)


def test_crosscheck_zero_root():
    rep = crosscheck_pde(spec(1.0, 4.0, 0.0, sigma=0.5), 0.0)
    assert rep.passed and abs(rep.mean_T) <= 1e-6
    assert rep.value_error <= 1e-9


def test_crosscheck_needs_noise():
    with pytest.raises(ValueError):
        crosscheck_pde(spec(1.0, 4.0, 0.0), 4.0)
