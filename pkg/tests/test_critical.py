import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snblab import critical
from snblab.converter import CMC, Custom, StateFeedback
from snblab.errors import CriticalError, DenominatorZero
from snblab.harmonic_balance import alpha_taylor
from snblab.tf_core import RationalTF

from conftest import cmc_spec, multiloop_spec

OPEN_LOOP = Custom(RationalTF((0.0,), (1.0,)))


@pytest.fixture(scope="module")
def multiloop_fold():
    sols = critical.find_snb(multiloop_spec())
    assert len(sols) == 1
    return sols[0]


def test_fold_point_certified(multiloop_fold):
    s = multiloop_spec()
    assert multiloop_fold.method == "exact_series"
    assert abs(critical.steady_residual(s, multiloop_fold.d_star, multiloop_fold.v_s_star)) < 1e-9 * s.V_m
    assert abs(multiloop_fold.balance_residual) < 1e-9 * s.V_m
    assert abs(multiloop_fold.slope_residual) < 1e-6 * s.m_a


def test_fold_matches_worked_example(multiloop_fold):
    assert multiloop_fold.D_star == pytest.approx(0.70, abs=0.005)
    assert multiloop_fold.d_star == pytest.approx(0.7 * 400e-6, abs=0.005 * 400e-6)
    assert multiloop_fold.v_s_star == pytest.approx(20.0, abs=0.1)


def test_rounded_example_point_is_near_balance():
    # (0.7, 20 V) is the fold rounded to two digits, so it balances only to ~1e-3 V
    s = multiloop_spec()
    assert abs(critical.steady_residual(s, 0.7 * s.T, 20.0)) < 1e-3


def test_residual_linear_in_reference():
    s = multiloop_spec()
    d = 0.42 * s.T
    v = critical.vs_of_d(s, d)
    s2 = s.with_(v_r=2 * s.v_r, V_m=2 * s.V_m)
    v2 = critical.vs_of_d(s2, d)
    assert v2 == pytest.approx(2 * v, rel=1e-12)
    assert abs(critical.steady_residual(s2, d, v2)) < 1e-12


def test_residual_small_duty_limit():
    s = multiloop_spec()
    r = critical.steady_residual(s, 1e-7 * s.T, 20.0)
    assert r == pytest.approx(s.scheme.offset_gain * s.v_r, abs=1e-5)


def test_vs_of_d_examples():
    s = multiloop_spec()
    assert critical.vs_of_d(s, 0.7 * s.T) == pytest.approx(20.0, abs=0.1)
    # numerator zero -> v_s = 0
    D = 0.3
    assert critical.vs_of_d(s.with_(v_r=s.V_m * D), D * s.T) == pytest.approx(0.0, abs=1e-14)


def test_three_solutions_below_fold():
    s = multiloop_spec()
    D = np.linspace(0.3, 0.99, 700)
    v = critical.vs_of_d(s, D * s.T) - 19.5
    roots = D[:-1][np.sign(v[:-1]) != np.sign(v[1:])]
    assert len(roots) == 2
    assert roots[1] - roots[0] > 0.05


def test_denominator_zero():
    s = multiloop_spec(scheme=OPEN_LOOP)
    with pytest.raises(DenominatorZero) as e:
        critical.vs_of_d(s, 0.5 * s.T)
    assert e.value.denominator == 0.0
    with pytest.raises(CriticalError):
        critical.vs_of_d(s, 1.2 * s.T)


def test_snb_lhs_examples():
    s = multiloop_spec()
    exact = critical.snb_lhs(s, 0.7 * s.T, 20.0)
    assert exact == pytest.approx(2500.0, rel=0.01)
    cf = critical.closed_form_state_feedback(s).s_plot(0.7, 20.0)
    assert cf == pytest.approx(2500.0, rel=0.01)
    assert abs(exact - cf) / s.m_a < 1e-3
    assert critical.snb_lhs(multiloop_spec(scheme=OPEN_LOOP), 0.3 * s.T, 17.0) == 0.0


def test_high_frequency_substitute():
    # G_hf = two-integrator approximation reproduces the closed form exactly
    s = multiloop_spec()
    ki, kv = 2.1435, -0.1383
    G_hf = RationalTF((kv / (s.L * s.C), ki / s.L), (0.0, 0.0, 1.0))
    for D in (0.3, 0.55, 0.7, 0.9):
        got = critical.snb_lhs(s, D * s.T, 20.0, G_hf=G_hf)
        ref = critical.closed_form_state_feedback(s).s_plot(D, 20.0)
        assert got == pytest.approx(ref, rel=1e-10)


def test_s_curve_crossing_and_hints():
    s = multiloop_spec()
    D = np.linspace(0.6, 0.8, 401)
    pts = critical.s_curve(s, D * s.T)
    sv = np.array([p.s_value for p in pts])
    k = np.flatnonzero(np.diff(np.sign(sv - s.m_a)))
    assert len(k) == 1
    assert D[k[0]] == pytest.approx(0.70, abs=0.005)
    for p in pts:
        assert (p.stable_hint == "stable") == (p.s_value < s.m_a - 1e-6 * s.m_a)
    # boundary iff within tolerance
    fold = critical.find_snb(s)[0]
    (p,) = critical.s_curve(s, [fold.d_star])
    assert p.stable_hint == "boundary"


def test_s_curve_open_loop_is_zero():
    s = multiloop_spec(scheme=OPEN_LOOP)
    pts = critical.s_curve(s, np.linspace(0.1, 0.9, 9) * s.T)
    assert all(p.s_value == 0.0 and p.stable_hint == "stable" for p in pts)


def test_l_curve_agrees_with_s_curve():
    s = multiloop_spec()
    D = np.linspace(0.2, 0.95, 40)
    sp = critical.s_curve(s, D * s.T)
    lp = critical.l_curve(s, D * s.T)
    for a, b in zip(sp, lp):
        # S - m_a = m_a (L - (T(0) + 1)) on the branch
        assert a.s_value - s.m_a == pytest.approx(s.m_a * (b.l_value - b.criterion), rel=1e-9, abs=1e-6)
        assert a.stable_hint == b.stable_hint
    with pytest.raises(CriticalError):
        critical.l_curve(s.with_(V_m=0.0), D * s.T)


def test_min_stabilizing_ramp():
    assert critical.min_stabilizing_ramp(multiloop_spec()) == pytest.approx(2898.0, rel=0.02)
    assert critical.min_stabilizing_ramp(multiloop_spec(scheme=OPEN_LOOP)) == 0.0


def test_min_stabilizing_ramp_cmc_end_of_range():
    # for CMC the S-plot keeps growing with D; its value at D -> 1 is the
    # closed form v_s (D - (K + 1)/2) / L at the branch's own source voltage
    s = cmc_spec()
    v_end = critical.vs_of_d(s, (1 - 1e-5) * s.T)
    ref = v_end * (1 - (s.K + 1) / 2) / s.L
    assert critical.min_stabilizing_ramp(s) == pytest.approx(ref, rel=0.01)


def test_closed_form_state_feedback_examples():
    s = multiloop_spec()
    cf = critical.closed_form_state_feedback(s)
    assert s.K == pytest.approx(4.545, abs=1e-3)
    assert cf.critical_duty == pytest.approx(0.713, abs=1e-3)
    assert cf.s_plot(0.7, 20.0) == pytest.approx(2500.0, rel=0.01)
    fold = critical.find_snb(s)[0]
    assert abs(cf.critical_duty - fold.D_star) < 0.015


def test_closed_form_reduces_to_cmc():
    for v_s, m_a, K in ((10.0, 1e4, 0.5), (24.0, 3e3, 0.2), (5.0, 0.0, 0.9)):
        s = cmc_spec(v_s=v_s, m_a=m_a)
        s = s.with_(R=2 * s.L / (K * s.T))
        a = critical.closed_form_state_feedback(s, k_i=1.0, k_v=0.0).critical_duty
        assert a == critical.closed_form_cmc(s)


def test_closed_form_warns_on_large_ripple_term():
    s = multiloop_spec(C=1e-6)
    with pytest.warns(UserWarning):
        critical.closed_form_state_feedback(s)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        critical.closed_form_state_feedback(multiloop_spec())


def test_closed_form_needs_current_gain():
    s = multiloop_spec(scheme=StateFeedback(0.0, 0.3), C=1e-3)
    with pytest.raises(CriticalError):
        critical.closed_form_state_feedback(s).critical_duty


def test_cmc_examples():
    s = cmc_spec()
    assert s.K == pytest.approx(0.5)
    assert critical.closed_form_cmc(s) == pytest.approx(0.85, abs=1e-12)
    assert critical.closed_form_cmc(cmc_spec(m_a=0.0)) == pytest.approx(0.75)
    (sol,) = critical.find_snb(s)
    assert sol.D_star == pytest.approx(0.85, abs=0.01)


def test_cmc_without_ramp_folds_at_half_k_plus_one():
    s = cmc_spec(m_a=0.0, D=0.75)
    (sol,) = critical.find_snb(s)
    assert sol.D_star == pytest.approx((s.K + 1) / 2, abs=0.005)


def test_cmc_heavy_load_has_no_fold():
    s = cmc_spec(m_a=0.0, D=0.75, R=10.0)
    assert s.K >= 1
    assert critical.closed_form_cmc(s) >= 1
    assert critical.find_snb(s) == []


def test_branch_consistency():
    s = multiloop_spec()
    rng = np.random.default_rng(11)
    d = rng.uniform(0.2, 0.98, 50) * s.T
    v = critical.vs_of_d(s, d)
    assert np.max(np.abs(critical.steady_residual(s, d, v))) < 1e-9 * s.V_m


def test_fold_is_extremum_of_branch(multiloop_fold):
    s = multiloop_spec()
    h = 1e-5 * s.T
    d = multiloop_fold.d_star
    slope = (critical.vs_of_d(s, d + h) - critical.vs_of_d(s, d - h)) / (2 * h)
    away = (critical.vs_of_d(s, d - 0.05 * s.T + h) - critical.vs_of_d(s, d - 0.05 * s.T - h)) / (2 * h)
    assert abs(slope) < 1e-4 * abs(away)


def _integrator_criterion_sides(s, D, ki, kv):
    ws = s.omega_s
    lhs = s.v_s / s.V_m * (ki * alpha_taylor(D, 0) / (s.L * ws)
                           + kv * alpha_taylor(D, 1) / (s.L * s.C * ws**2))
    rhs = s.v_s / s.V_m * (ki / s.R + kv) + 1
    return lhs, rhs


def test_integrator_criterion_equals_closed_form_s_plot():
    rng = np.random.default_rng(3)
    for _ in range(100):
        s = multiloop_spec(v_s=rng.uniform(1, 100), R=rng.uniform(1, 100), L=rng.uniform(1e-5, 1e-1),
                      C=rng.uniform(1e-6, 1e-3), T=rng.uniform(1e-6, 1e-3), V_m=rng.uniform(0.1, 5))
        ki, kv, D = rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0.01, 0.99)
        lhs, rhs = _integrator_criterion_sides(s, D, ki, kv)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            closed = critical.closed_form_state_feedback(s, ki, kv).s_plot(D)
        assert s.m_a * (lhs - rhs) == pytest.approx(closed - s.m_a, rel=1e-9, abs=1e-9 * s.m_a)


def test_trace_boundary_worked_example():
    s = multiloop_spec()
    pts = critical.trace_boundary(s, ("R", 21.8, 22.2), ("v_s", 15.0, 25.0), resolution=3, y_samples=6)
    assert [p.x for p in pts] == pytest.approx([21.8, 22.0, 22.2])
    mid = pts[1]
    assert mid.y == pytest.approx(20.0, rel=0.01)
    assert mid.stable_side == "below"


def test_trace_boundary_cmc_against_closed_form():
    # each boundary point (R, v_s) is a fold whose duty obeys the CMC closed form
    s = cmc_spec()
    pts = critical.trace_boundary(s, ("R", 30.0, 60.0), ("v_s", 5.0, 20.0), resolution=4, y_samples=8)
    assert len(pts) == 4 and all(p.y is not None for p in pts)
    for p in pts:
        sp = s.with_(R=p.x, v_s=p.y)
        sol = critical.find_snb(sp)[0]
        assert sol.v_s_star == pytest.approx(p.y, rel=1e-6)
        assert sol.D_star == pytest.approx(critical.closed_form_cmc(sp), abs=0.01)


def test_trace_boundary_degenerate_is_empty():
    s = multiloop_spec(scheme=OPEN_LOOP)
    assert critical.trace_boundary(s, ("R", 10, 30), ("v_s", 10, 30), resolution=3, y_samples=4) == []
    with pytest.raises(CriticalError):
        critical.trace_boundary(s, ("scheme", 1, 2), ("v_s", 10, 30))


@settings(max_examples=15, deadline=None)
@given(D=st.floats(0.05, 0.95), ki=st.floats(0.1, 5.0), kv=st.floats(-0.5, 0.5))
def test_exact_s_plot_tracks_closed_form_when_ripple_small(D, ki, kv):
    # T^2/(12 LC) tiny: exact and two-integrator S-plots agree to O(T/tau)
    s = multiloop_spec(scheme=StateFeedback(ki, kv), T=20e-6, V_m=0.05)
    v = 15.0
    exact = critical.snb_lhs(s, D * s.T, v)
    approx = critical.closed_form_state_feedback(s).s_plot(D, v)
    scale = v * (ki / s.L + abs(kv) / s.T)
    assert abs(exact - approx) < 2e-3 * scale
