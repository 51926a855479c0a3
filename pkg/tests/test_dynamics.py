import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from overdrive import _kernel as K
from overdrive.core import TYPE_I, ParamBundle, Pose, PseudoVelocity, SimState, SystemParams
from overdrive.dynamics import (GroupTorques, friction_loads, group_torques, kinetic_energy, pseudo_accel,
                                step)
from overdrive.harness import NO, Scenario, run

P13 = SystemParams().with_gross_mass(13.2)
BUNDLE = ParamBundle(P13, TYPE_I)


def state(v=0.0, w=0.0, theta=0.0, n=16, active=True):
    s = SimState.initial(n, active)
    s.pose = Pose(theta=theta)
    s.nu = PseudoVelocity(v, w)
    return s


def test_friction_zero_at_rest():
    f = friction_loads(state(), P13)
    assert (f.F_rx, f.F_ry, f.M_r) == (0.0, 0.0, 0.0)


def test_friction_saturates_at_mu_m_g():
    f = friction_loads(state(20.0), P13)
    assert f.F_rx == pytest.approx(0.01 * 13.2 * 9.81, rel=1e-4)
    assert f.F_rx == pytest.approx(1.295, abs=1e-3)
    assert f.F_ry == 0.0


def test_friction_rotates_with_heading():
    f = friction_loads(state(20.0, theta=math.pi / 2), P13)
    assert abs(f.F_rx) < 1e-12 and f.F_ry == pytest.approx(1.295, abs=1e-3)


def test_pure_spin_friction_opposes_rotation():
    f = friction_loads(state(0.0, 1.0), P13)
    assert abs(f.F_rx) < 1e-12 and abs(f.F_ry) < 1e-12
    # reported as a resisting magnitude along the motion ...
    assert f.M_r > 0
    # ... so the yaw acceleration it produces opposes omega
    zero = GroupTorques(0.0, 0.0, 8, 8)
    frictionless_motor = replace(TYPE_I, no_load_current=1e-12, viscous_coeff=1e-12)
    assert pseudo_accel(state(0.0, 1.0), zero, P13, frictionless_motor)[1] < 0
    assert friction_loads(state(0.0, -1.0), P13).M_r < 0


def test_stall_current_and_torque():
    s = state(n=2)
    s.set_counts(1, 1)
    p = SystemParams(n_total=2)
    t = group_torques((24.0, 24.0), s, TYPE_I, p)
    assert t.current_L == pytest.approx(3.414, abs=1e-3)
    # dead stop: the no-load drag is a Coulomb term and vanishes at zero speed
    assert t.tau_L == pytest.approx(TYPE_I.torque_constant * 24.0 / TYPE_I.armature_resistance)
    # as the shaft starts to turn forwards the full no-load drag is subtracted
    s.nu = PseudoVelocity(1e-5, 0.0)
    t = group_torques((24.0, 24.0), s, TYPE_I, replace(p, k_s=1e7))
    assert t.tau_L == pytest.approx(0.1285, abs=1e-4)


def test_zero_current_gives_drag():
    v = 10.0
    phi = v / P13.wheel_radius
    s = state(v)
    t = group_torques((TYPE_I.back_emf_constant * phi,) * 2, s, TYPE_I, P13)
    assert abs(t.current_L) < 1e-12
    drag = 8 * (-TYPE_I.torque_constant * TYPE_I.no_load_current * math.atan(1000 * v) * 2 / math.pi
                - TYPE_I.viscous_coeff * phi)
    assert t.tau_L < 0
    assert t.tau_L == pytest.approx(drag, rel=1e-9)


def test_no_active_motor_no_drive_torque():
    s = state(0.0, active=False)
    t = group_torques((24.0, -24.0), s, TYPE_I, P13)
    assert t.tau_L == 0.0 and t.tau_R == 0.0


def test_zero_torque_at_rest():
    assert pseudo_accel(state(), GroupTorques(0.0, 0.0, 8, 8), P13, TYPE_I) == (0.0, 0.0)


def test_symmetric_torque_frictionless():
    p = replace(P13, mu_s=0.0, mu_l=0.0)
    tau = 0.5
    vd, wd = pseudo_accel(state(), GroupTorques(tau, tau, 8, 8), p, TYPE_I)
    r = p.wheel_radius
    assert vd == pytest.approx(2 * tau / (r * (p.mass + 16 * p.I_w / r**2)), rel=1e-12)
    assert wd == 0.0


def test_antisymmetric_torque():
    p = replace(P13, mu_s=0.0, mu_l=0.0)
    vd, wd = pseudo_accel(state(), GroupTorques(-0.3, 0.3, 8, 8), p, TYPE_I)
    assert vd == 0.0 and wd > 0
    vd, wd = pseudo_accel(state(), GroupTorques(0.3, -0.3, 8, 8), p, TYPE_I)
    assert wd < 0


def test_step_at_rest_only_advances_time():
    s = state()
    s2 = step(s, (0.0, 0.0), 1e-3, BUNDLE)
    assert s2.time == pytest.approx(1e-3)
    assert s2.pose == s.pose and s2.nu == s.nu and s2.discharge == 0.0


def test_step_rejects_bad_dt():
    with pytest.raises(ValueError):
        step(state(), (0.0, 0.0), -1e-3, BUNDLE)


def test_step_bookkeeping():
    s = state(10.0)
    s.set_counts(3, 3)
    s2 = step(s, (24.0, 24.0), 1e-3, BUNDLE)
    on = [a for a in s2.agents if a.active]
    off = [a for a in s2.agents if not a.active]
    assert all(a.distance > 0 for a in s2.agents)
    assert all(a.active_distance > 0 and a.cumulative_on_steps == 1 for a in on)
    assert all(a.active_distance == 0 and a.continuous_on_time == 0 for a in off)
    assert s2.discharge > 0


def _terminal_velocity(V, n_active, p=P13, m=TYPE_I):
    """Independent closed form: drive force of all active motors balances saturated friction."""
    r = p.wheel_radius

    def net(v):
        phi = v / r
        ia = (V - m.back_emf_constant * phi) / m.armature_resistance
        tau = m.torque_constant * ia - m.torque_constant * m.no_load_current * (2 / math.pi) * math.atan(
            p.k_s * r * phi) - m.viscous_coeff * phi
        drag = (p.n_total - n_active) * m.viscous_coeff * phi
        return (n_active * tau - drag) / r - p.mu_s * p.mass * p.g * (2 / math.pi) * math.atan(p.k_s * v)

    return brentq(net, 0.1, 30.0)


def test_open_loop_terminal_velocity():
    vt = _terminal_velocity(24.0, 16)
    assert 19.0 < vt < 22.0
    x = np.zeros(8)
    P = K.pack_params(BUNDLE)
    acc = np.zeros(K.N_ACC)
    for _ in range(120_000):
        K.step(x, 24.0, 24.0, 8.0, 8.0, 1e-3, P, acc)
    assert x[5] == pytest.approx(vt, rel=1e-6)


def test_zoh_consistency():
    sc = replace(Scenario().with_gross_mass(13.2), mode=NO)
    a = run(sc)
    b = run(replace(sc, dt=5e-4))
    va, vb = a.traces["v_x"][-1], b.traces["v_x"][-1]
    assert abs(va - vb) / va < 1e-3


def test_straight_line_symmetry():
    m = run(replace(Scenario().with_gross_mass(23.2), mode=NO, duration=120.0))
    assert np.max(np.abs(m.traces["omega"])) <= 1e-12


nus = st.tuples(st.floats(-25, 25), st.floats(-20, 20))


@settings(max_examples=60, deadline=None)
@given(nu=nus, nl=st.integers(0, 8), nr=st.integers(0, 8), th=st.floats(-3, 3),
       mass=st.floats(5, 60), dt=st.sampled_from([1e-4, 1e-3, 5e-3]))
def test_zero_voltage_dissipates(nu, nl, nr, th, mass, dt):
    p = P13.with_gross_mass(mass)
    b = ParamBundle(p, TYPE_I)
    s = state(*nu, theta=th)
    s.set_counts(nl, nr)
    e = kinetic_energy(s, p)
    for _ in range(40):
        s = step(s, (0.0, 0.0), dt, b)
        e2 = kinetic_energy(s, p)
        assert e2 <= e + 1e-12
        e = e2


@settings(max_examples=200)
@given(nu=nus, tl=st.floats(-2, 2), tr=st.floats(-2, 2), nl=st.integers(0, 8), nr=st.integers(0, 8))
def test_literal_and_corrected_agree_in_sign(nu, tl, tr, nl, nr):
    s = state(*nu)
    t = GroupTorques(tl, tr, nl, nr)
    a = pseudo_accel(s, t, P13, TYPE_I)
    b = pseudo_accel(s, t, P13, TYPE_I, literal=True)
    assert np.array_equal(np.sign(a), np.sign(b))
