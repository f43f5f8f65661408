import numpy as np
import pytest
from scipy.linalg import expm

from snblab import critical, switching_sim as sim
from snblab.converter import VMC, Custom, StateFeedback
from snblab.errors import DCMViolation, ImproperTransferFunction, NoConvergence, SimulationError
from snblab.tf_core import RationalTF

from conftest import cmc_spec, multiloop_spec


def test_build_pwl_state_feedback():
    s = multiloop_spec()
    sys = sim.build_pwl(s)
    L, C, R = s.L, s.C, s.R
    assert np.allclose(sys.A1, [[0, -1 / L], [1 / C, -1 / (R * C)]], rtol=1e-15)
    assert np.array_equal(sys.A1, sys.A2)
    assert np.allclose(sys.b1, [s.v_s / L, 0.0])
    assert np.all(sys.b2 == 0)
    assert np.allclose(sys.feedback_row, [-2.1435, 0.1383])
    assert sys.feedback_offset == s.v_r


def test_build_pwl_cmc():
    s = cmc_spec()
    sys = sim.build_pwl(s)
    assert np.allclose(sys.feedback_row, [-1.0, 0.0])
    assert sys.feedback_offset == s.v_r
    assert sys.y([2.0, 7.0]) == pytest.approx(s.v_r - 2.0)


def test_characteristic_polynomial_matches_power_stage():
    for Rc in (0.0, 0.3):
        s = multiloop_spec(R_c=Rc)
        A = sim.build_pwl(s).A1
        den = np.array([1.0, s.L / s.R + Rc * s.C, s.L * s.C / s.rho])  # ascending
        char = np.poly(A)  # descending, monic
        assert np.allclose(char[::-1] * den[2], den, rtol=1e-12)


def test_build_pwl_vmc_and_custom():
    gc = RationalTF((0.5, 1e-4), (1.0, 1e-4))
    s = multiloop_spec(scheme=VMC(gc), v_r=0.5)
    sys = sim.build_pwl(s)
    assert sys.state_dim == 3
    assert np.array_equal(sys.A1, sys.A2)
    with pytest.raises(ImproperTransferFunction):
        sim.build_pwl(multiloop_spec(scheme=Custom(RationalTF((1.0, 1.0), (1.0, 1.0)))))


def test_vmc_orbit_satisfies_balance():
    # lead-lag compensator: the simulator realises the appended state exactly
    gc = RationalTF((0.5, 2e-4), (1.0, 1e-4))
    s = multiloop_spec(scheme=VMC(gc), v_r=0.5 * 10.0 / 20.0 + 0.4)
    sys = sim.build_pwl(s)
    x = sim.simulate_cycles(sys, s, np.zeros(3), 600).states[-1]
    orb = sim.find_orbit(sys, s, x)
    assert 0 < orb.duty < 1 and orb.stable
    assert abs(critical.steady_residual(s, orb.duty * s.T, s.v_s)) < 1e-6 * s.V_m


def test_semigroup_property():
    s = multiloop_spec(v_s=15.0)
    sys = sim.build_pwl(s)
    x0 = np.array([0.3, 5.0])
    two = sim.simulate_cycles(sys, s, x0, 2).states[-1]
    once = sim.strobe_map(sys, s, sim.strobe_map(sys, s, x0))
    assert np.allclose(two, once, rtol=1e-12, atol=0)


def test_checkpoint_density_does_not_matter(monkeypatch):
    s = multiloop_spec(v_s=19.5)
    x0 = np.array([0.5, 12.0])
    ends = []
    for n in (64, 128):
        monkeypatch.setattr(sim, "N_CHECK", n)
        sys = sim.build_pwl(s)
        ends.append(sim.simulate_cycles(sys, s, x0, 30).states[-1])
    assert np.allclose(ends[0], ends[1], rtol=1e-12, atol=0)


def test_zero_feedback_duty_is_reference_over_ramp():
    s = multiloop_spec(scheme=StateFeedback(0.0, 0.0), v_r=0.37)
    sys = sim.build_pwl(s)
    tr = sim.simulate_cycles(sys, s, np.array([1.0, 5.0]), 20)
    assert np.allclose(tr.duties, 0.37, atol=1e-12)


def test_saturated_at_high_source_voltage():
    s = multiloop_spec(v_s=21.0)
    sys = sim.build_pwl(s)
    tr = sim.simulate_cycles(sys, s, np.zeros(2), 400)
    assert tr.duties[-1] == 1.0
    assert sim.cycle_mean_vo(sys, s, tr.states[-1]) == pytest.approx(21.0, rel=1e-3)
    # no switching: the map is affine with Jacobian exp(A T)
    orb = sim.find_orbit(sys, s, tr.states[-1])
    assert orb.saturated
    assert np.allclose(orb.jacobian, expm(sys.A1 * s.T), rtol=1e-6, atol=1e-9)


def test_settles_onto_harmonic_balance_branch():
    s = multiloop_spec(v_s=15.0)
    sys = sim.build_pwl(s)
    tr = sim.simulate_cycles(sys, s, np.zeros(2), 200)
    D = tr.duties[-1]
    assert 0 < D < 1
    assert critical.vs_of_d(s, D * s.T) == pytest.approx(15.0, rel=1e-6)
    assert abs(tr.duties[-1] - tr.duties[-2]) < 1e-7


def test_fixed_point_of_strobe_map():
    s = multiloop_spec(v_s=18.0)
    sys = sim.build_pwl(s)
    x = sim.simulate_cycles(sys, s, np.zeros(2), 300).states[-1]
    orb = sim.find_orbit(sys, s, x)
    assert np.allclose(sim.strobe_map(sys, s, orb.x0), orb.x0, rtol=1e-10)
    assert orb.residual < 1e-10 * (1 + np.linalg.norm(orb.x0))
    assert len(orb.multipliers) == sys.state_dim
    assert orb.stable and not orb.is_snb()


def test_two_orbits_coexist_below_fold():
    s = multiloop_spec(v_s=19.5)
    sys = sim.build_pwl(s)
    D = np.linspace(0.5, 0.95, 451)
    v = critical.vs_of_d(s, D * s.T) - 19.5
    roots = D[:-1][np.sign(v[:-1]) != np.sign(v[1:])]
    orbits = [sim.find_orbit(sys, s, sim.fixed_duty_orbit(sys, s, r)) for r in roots]
    assert len(orbits) == 2
    assert abs(orbits[0].duty - orbits[1].duty) > 0.05
    assert sorted(o.stable for o in orbits) == [False, True]


def test_open_loop_multipliers():
    # constant comparator input: the switch instant ignores the state
    s = multiloop_spec(scheme=StateFeedback(0.0, 0.0), v_r=0.6)
    sys = sim.build_pwl(s)
    orb = sim.find_orbit(sys, s, np.array([0.5, 10.0]))
    d = 0.6 * s.T
    M = expm(sys.A2 * (s.T - d)) @ expm(sys.A1 * d)
    ref = np.sort_complex(np.linalg.eigvals(M))
    assert np.allclose(np.sort_complex(orb.multipliers), ref, rtol=1e-7, atol=1e-9)


def test_newton_failure_reported():
    s = multiloop_spec(v_s=19.5)
    sys = sim.build_pwl(s)
    with pytest.raises(NoConvergence):
        sim.find_orbit(sys, s, np.array([0.5, 12.0]), max_iter=0)
    with pytest.raises(SimulationError):
        sim.find_orbit(sys, s, np.array([np.nan, 1.0]))


def test_dcm_is_an_error():
    s = multiloop_spec(v_s=15.0, R=2000.0, scheme=StateFeedback(0.0, 0.0), v_r=0.05)
    sys = sim.build_pwl(s)
    with pytest.raises(DCMViolation):
        sim.simulate_cycles(sys, s, np.zeros(2), 50)


def test_mean_output_equals_duty_times_source():
    for v in (12.0, 17.0, 19.0):
        s = multiloop_spec(v_s=v)
        sys = sim.build_pwl(s)
        x = sim.simulate_cycles(sys, s, np.zeros(2), 300).states[-1]
        orb = sim.find_orbit(sys, s, x)
        assert abs(sim.cycle_mean_vo(sys, s, orb.x0) - orb.duty * v) < 1e-6 * v


def test_branch_curve_and_fold():
    s = multiloop_spec()
    D = np.linspace(0.6, 0.8, 21)
    pts = sim.branch_curve(s, D)
    assert not any(p.mismatch for p in pts)
    mu = np.array([p.max_multiplier for p in pts])
    assert np.max(np.abs(np.diff(mu))) < 0.2
    for p in pts:
        assert p.stable == (p.max_multiplier < 1)
        assert p.v_o_avg == pytest.approx(p.D * p.v_s, rel=1e-6)
    fold = sim.locate_fold(s, D)
    assert fold.v_s == pytest.approx(20.0, rel=0.01)
    assert fold.v_o_avg == pytest.approx(14.0, rel=0.01)
    assert fold.max_multiplier == pytest.approx(1.0, abs=0.02)
    hb = critical.find_snb(s)[0]
    assert abs(fold.D - hb.D_star) < 0.005
    assert abs(fold.v_s - hb.v_s_star) / hb.v_s_star < 0.01
    assert abs(fold.D_multiplier_crossing - hb.D_star) < 0.005


def test_s_plot_sign_matches_simulated_stability():
    s = multiloop_spec()
    D = np.array([0.62, 0.66, 0.69, 0.72, 0.75, 0.8])
    pts = sim.branch_curve(s, D)
    hints = critical.s_curve(s, D * s.T)
    for p, h in zip(pts, hints):
        assert (h.stable_hint == "stable") == p.stable


def test_sweep_below_fold_has_no_jumps():
    s = multiloop_spec()
    pts = sim.sweep_hysteresis(s, np.linspace(15.0, 18.8, 10), "up", settle_cycles=300)
    assert sim.detect_jumps(pts) == []
    assert all(p.classification == "periodic" for p in pts)


def test_detect_jumps_merges_slow_escape():
    P = sim.SweepPoint
    pts = [P(1.0, 5.0, 0.5, "periodic"), P(2.0, 10.0, 0.6, "unsettled"),
           P(3.0, 20.0, 1.0, "saturated"), P(4.0, 20.1, 1.0, "saturated")]
    (j,) = sim.detect_jumps(pts, rel=0.05)
    assert (j.v_s_from, j.v_s_to, j.v_o_from, j.v_o_to) == (1.0, 3.0, 5.0, 20.0)
    assert j.direction == "up"


def test_sweep_argument_checks():
    s = multiloop_spec()
    with pytest.raises(ValueError):
        sim.sweep_hysteresis(s, [1.0, 2.0], "sideways")
    with pytest.raises(SimulationError):
        sim.sweep_hysteresis(s, [-1.0, 2.0], "up", settle_cycles=1)


def test_sample_waveform_rows():
    s = multiloop_spec(v_s=15.0)
    sys = sim.build_pwl(s)
    rows = sim.sample_waveform(sys, s, np.array([0.6, 10.0]), n=2, points_per_cycle=20)
    assert len(rows) == 40
    t = [r[0] for r in rows]
    assert np.all(np.diff(t) > 0)
    assert rows[0][4] == 1
    assert {r[4] for r in rows} <= {1, 2}
    assert rows[5][3] == pytest.approx(s.V_m * 5 / 20)


@pytest.mark.parametrize("make", [multiloop_spec, cmc_spec])
def test_time_domain_branch_equals_harmonic_branch(make):
    # two independent constructions of the same periodic branch
    s = make()
    for D in np.random.default_rng(1).uniform(0.05, 0.95, 25):
        a = sim.periodic_source_voltage(s, D)
        b = critical.vs_of_d(s, D * s.T)
        assert a == pytest.approx(b, rel=1e-10)


def test_branch_curve_sources_agree():
    s = multiloop_spec()
    D = [0.65, 0.75]
    for p, q in zip(sim.branch_curve(s, D), sim.branch_curve(s, D, source="time")):
        assert p.v_s == pytest.approx(q.v_s, rel=1e-10)
        assert p.max_multiplier == pytest.approx(q.max_multiplier, abs=1e-6)
    with pytest.raises(ValueError):
        sim.branch_curve(s, D, source="fourier")
    with pytest.raises(SimulationError):
        sim.periodic_source_voltage(s, 1.0)


def test_jacobian_step_insensitive():
    # central differences at two step scales agree: the default step is in the flat region
    s = multiloop_spec(v_s=18.0)
    sys = sim.build_pwl(s)
    x = sim.find_orbit(sys, s, sim.simulate_cycles(sys, s, np.zeros(2), 300).states[-1]).x0
    J = sim._jacobian(sys, s, x)
    J2 = np.empty_like(J)
    for i in range(x.size):
        h = 1e-7 * abs(x[i])
        e = np.zeros(x.size)
        e[i] = h
        J2[:, i] = (sim.strobe_map(sys, s, x + e) - sim.strobe_map(sys, s, x - e)) / (2 * h)
    assert np.allclose(J, J2, rtol=1e-5, atol=1e-7)
