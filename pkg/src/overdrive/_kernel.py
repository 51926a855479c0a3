"""Compiled scalar physics shared by the public API and the run loop.

State vector ``x``: [X, Y, theta, phi_L, phi_R, v_x, omega, discharge_mAh].
PID memory ``mem``: [E_L, e_prev_L, E_R, e_prev_R, primed].
Parameter vector layout is given by the ``P_*`` indices below and built by
:func:`pack_params`.
"""
import math

import numpy as np
from numba import njit

(P_N, P_M, P_A, P_B, P_R, P_MUS, P_MUL, P_KS, P_G, P_IZZ, P_IW,
 P_VRATED, P_I0, P_OHM, P_BD, P_KT, P_KE, P_LITERAL,
 P_BH, P_BW, P_BY, P_BZ, P_BCAP, P_BCUT, P_BPACKS, P_BON) = range(26)
N_PARAMS = 26

# accumulator slots
(A_ENERGY, A_CHARGE, A_DIST_L, A_DIST_R, A_DIST, A_VDQ,
 A_IA_L, A_IA_R, A_V_L, A_V_R, A_TAU_L, A_TAU_R, A_STEPS, A_DEPLETED,
 A_ETA_L, A_ETA_R) = range(16)
N_ACC = 16

TWO_OVER_PI = 2.0 / math.pi
# longitudinal positions of the four lateral wheel rows, in units of b
ROW_OFFSETS = (1.5, 0.5, -0.5, -1.5)


def pack_params(bundle, literal=False, battery=False):
    s, m, b = bundle.system, bundle.motor, bundle.battery
    P = np.zeros(N_PARAMS)
    P[P_N] = s.n_total
    P[P_M] = s.mass
    P[P_A] = s.track_width
    P[P_B] = s.wheel_spacing
    P[P_R] = s.wheel_radius
    P[P_MUS] = s.mu_s
    P[P_MUL] = s.mu_l
    P[P_KS] = s.k_s
    P[P_G] = s.g
    P[P_IZZ] = s.I_zz
    P[P_IW] = s.I_w
    P[P_VRATED] = m.rated_voltage
    P[P_I0] = m.no_load_current
    P[P_OHM] = m.armature_resistance
    P[P_BD] = m.viscous_coeff
    P[P_KT] = m.torque_constant
    P[P_KE] = m.back_emf_constant
    P[P_LITERAL] = 1.0 if literal else 0.0
    P[P_BH] = b.h
    P[P_BW] = b.w
    P[P_BY] = b.y
    P[P_BZ] = b.z
    P[P_BCAP] = b.capacity
    P[P_BCUT] = b.cutoff_fraction * m.rated_voltage
    P[P_BPACKS] = b.n_packs
    P[P_BON] = 1.0 if battery else 0.0
    return P


@njit(cache=True)
def smooth_sign(v, k):
    return TWO_OVER_PI * math.atan(k * v)


@njit(cache=True)
def friction(vx, w, P):
    """Body-frame resisting loads (F_x, F_y, M_r), positive along the motion."""
    n = P[P_N]
    a = P[P_A]
    b = P[P_B]
    ks = P[P_KS]
    normal = P[P_M] * P[P_G] / n
    side = 0.5 * n * P[P_MUS] * normal
    f_l = side * smooth_sign(vx - 0.5 * a * w, ks)
    f_r = side * smooth_sign(vx + 0.5 * a * w, ks)
    fx = f_l + f_r
    row = 0.25 * n * P[P_MUL] * normal
    fy = 0.0
    mr = 0.5 * a * (f_r - f_l)
    for off in ROW_OFFSETS:
        x_row = off * b
        f = row * smooth_sign(x_row * w, ks)
        fy += f
        mr += x_row * f
    return fx, fy, mr


@njit(cache=True)
def friction_stiffness(vx, w, P):
    """Rates d(friction deceleration)/dv and d(friction yaw deceleration)/dw, in 1/s.

    Diagonal of the friction Jacobian scaled by the inertia denominators of
    :func:`accel_from_torques`; always >= 0.
    """
    n = P[P_N]
    a = P[P_A]
    b = P[P_B]
    ks = P[P_KS]
    r = P[P_R]
    normal = P[P_M] * P[P_G] / n
    side = 0.5 * n * P[P_MUS] * normal
    row = 0.25 * n * P[P_MUL] * normal
    zl = ks * (vx - 0.5 * a * w)
    zr = ks * (vx + 0.5 * a * w)
    gl = TWO_OVER_PI * ks / (1.0 + zl * zl)
    gr = TWO_OVER_PI * ks / (1.0 + zr * zr)
    dfx = side * (gl + gr)
    dmr = side * 0.25 * a * a * (gl + gr)
    for off in ROW_OFFSETS:
        x_row = off * b
        z = ks * x_row * w
        dmr += row * x_row * x_row * TWO_OVER_PI * ks / (1.0 + z * z)
    den_v, den_w = inertia_denominators(P)
    return r * dfx / den_v, 2.0 * r * dmr / den_w


@njit(cache=True)
def inertia_denominators(P):
    r = P[P_R]
    a = P[P_A]
    n = P[P_N]
    m = P[P_M]
    Iw = P[P_IW]
    if P[P_LITERAL] > 0.5:
        return r * (m + n * Iw), 2.0 * r * (P[P_IZZ] + 0.5 * n * Iw * a * a / 2.0)
    return r * (m + n * Iw / (r * r)), 2.0 * r * (P[P_IZZ] + n * Iw * a * a / (4.0 * r * r))


@njit(cache=True)
def armature_current(V, phidot, P):
    return (V - P[P_KE] * phidot) / P[P_OHM]


@njit(cache=True)
def motor_torque(Ia, phidot, P):
    """Shaft torque of one active motor for armature current ``Ia``."""
    # no-load current acts as Coulomb drag, regularised like the wheel friction
    return (P[P_KT] * Ia - P[P_KT] * P[P_I0] * smooth_sign(phidot * P[P_R], P[P_KS])
            - P[P_BD] * phidot)


@njit(cache=True)
def efficiency(V, Ia, tau, phidot):
    p_in = V * Ia
    p_out = tau * phidot
    if p_in <= 0.0 or p_out < 0.0:
        return 0.0
    eta = p_out / p_in
    if eta > 1.0:
        return 1.0
    return eta


@njit(cache=True)
def accel_from_torques(vx, w, tauL, tauR, NaL, NaR, P):
    """Pseudo-accelerations (vdot, wdot) for given group motor torques."""
    r = P[P_R]
    a = P[P_A]
    n = P[P_N]
    half = 0.5 * n
    phiL = (vx - 0.5 * a * w) / r
    phiR = (vx + 0.5 * a * w) / r
    # free-wheeling inactive motors still carry viscous drag
    effL = tauL - (half - NaL) * P[P_BD] * phiL
    effR = tauR - (half - NaR) * P[P_BD] * phiR
    fx, fy, mr = friction(vx, w, P)
    den_v, den_w = inertia_denominators(P)
    vdot = (effL + effR - r * fx) / den_v
    wdot = (a * (effR - effL) - 2.0 * r * mr) / den_w
    return vdot, wdot


@njit(cache=True)
def group_torques(vx, w, VL, VR, NaL, NaR, P):
    """(IaL, IaR, tauL, tauR) for held group voltages."""
    r = P[P_R]
    a = P[P_A]
    phiL = (vx - 0.5 * a * w) / r
    phiR = (vx + 0.5 * a * w) / r
    IaL = armature_current(VL, phiL, P)
    IaR = armature_current(VR, phiR, P)
    return IaL, IaR, NaL * motor_torque(IaL, phiL, P), NaR * motor_torque(IaR, phiR, P)


@njit(cache=True)
def pseudo_accel(x, VL, VR, NaL, NaR, P):
    """Returns (vdot, wdot, IaL, IaR, tauL, tauR) for held group voltages."""
    IaL, IaR, tauL, tauR = group_torques(x[5], x[6], VL, VR, NaL, NaR, P)
    vdot, wdot = accel_from_torques(x[5], x[6], tauL, tauR, NaL, NaR, P)
    return vdot, wdot, IaL, IaR, tauL, tauR


@njit(cache=True)
def supply_voltage(x, P):
    if P[P_BON] < 0.5:
        return P[P_VRATED]
    vb = battery_voltage(x[7] / P[P_BPACKS], P[P_BH], P[P_BW], P[P_BY], P[P_BZ])
    return min(P[P_VRATED], vb)


@njit(cache=True)
def battery_voltage(d, h, w, y, z):
    return h * math.exp(w * d) + y * math.exp(z * d)


@njit(cache=True)
def is_depleted(x, P):
    if P[P_BON] < 0.5:
        return False
    d = x[7] / P[P_BPACKS]
    if d >= P[P_BCAP]:
        return True
    return battery_voltage(d, P[P_BH], P[P_BW], P[P_BY], P[P_BZ]) < P[P_BCUT]


@njit(cache=True)
def clamp(v, lo, hi):
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


@njit(cache=True)
def step(x, VL, VR, NaL, NaR, dt, P, acc):
    """One ZOH step of the motor-integrated dynamics; ``x`` updated in place."""
    vmax = supply_voltage(x, P)
    VL = clamp(VL, -vmax, vmax)
    VR = clamp(VR, -vmax, vmax)
    vdot, wdot, IaL, IaR, tauL, tauR = pseudo_accel(x, VL, VR, NaL, NaR, P)
    a = P[P_A]
    r = P[P_R]
    phiL = (x[5] - 0.5 * a * x[6]) / r
    phiR = (x[5] + 0.5 * a * x[6]) / r
    acc[A_ETA_L] = efficiency(VL, IaL, tauL / NaL, phiL) if NaL > 0 else 0.0
    acc[A_ETA_R] = efficiency(VR, IaR, tauR / NaR, phiR) if NaR > 0 else 0.0
    # the friction terms are stiff near zero slip; treat them linearly-implicitly
    kv, kw = friction_stiffness(x[5], x[6], P)
    vx = x[5] + dt * vdot / (1.0 + dt * kv)
    w = x[6] + dt * wdot / (1.0 + dt * kw)
    th = x[2]
    vL = vx - 0.5 * a * w
    vR = vx + 0.5 * a * w
    x[0] += dt * vx * math.cos(th)
    x[1] += dt * vx * math.sin(th)
    x[2] += dt * w
    x[3] += dt * vL / r
    x[4] += dt * vR / r
    x[5] = vx
    x[6] = w
    # electrical power drawn; generating quadrants are not credited back
    pL = VL * NaL * IaL
    pR = VR * NaR * IaR
    qL = NaL * abs(IaL) * dt if pL > 0.0 else 0.0
    qR = NaR * abs(IaR) * dt if pR > 0.0 else 0.0
    mah = (qL + qR) / 3.6
    x[7] += mah
    acc[A_ENERGY] += (max(pL, 0.0) + max(pR, 0.0)) * dt
    acc[A_VDQ] += abs(VL) * qL + abs(VR) * qR
    acc[A_CHARGE] += mah
    acc[A_DIST_L] += abs(vL) * dt
    acc[A_DIST_R] += abs(vR) * dt
    acc[A_DIST] += abs(vx) * dt
    acc[A_IA_L] = IaL
    acc[A_IA_R] = IaR
    acc[A_V_L] = VL
    acc[A_V_R] = VR
    acc[A_TAU_L] = tauL
    acc[A_TAU_R] = tauR
    acc[A_STEPS] += 1.0


@njit(cache=True)
def pid_group(phidot, ref, mem, k, kp, ki, kd, vmax, emax):
    """Discrete PID of one group; memory slots ``mem[2k], mem[2k+1]``."""
    e = phidot - ref
    if mem[4] < 0.5:
        mem[2 * k + 1] = e
    E = clamp(mem[2 * k] + e, -emax, emax)
    de = e - mem[2 * k + 1]
    mem[2 * k] = E
    mem[2 * k + 1] = e
    # e is measured minus reference, so a positive command needs a negative sum
    return clamp(-(kp * e + ki * E + kd * de), -vmax, vmax)


@njit(cache=True)
def control(x, mem, P, gains, refL, refR):
    r = P[P_R]
    a = P[P_A]
    phiL = (x[5] - 0.5 * a * x[6]) / r
    phiR = (x[5] + 0.5 * a * x[6]) / r
    vmax = supply_voltage(x, P)
    VL = pid_group(phiL, refL, mem, 0, gains[0], gains[1], gains[2], vmax, gains[3])
    VR = pid_group(phiR, refR, mem, 1, gains[0], gains[1], gains[2], vmax, gains[3])
    mem[4] = 1.0
    return VL, VR


@njit(cache=True)
def advance(x, mem, P, gains, refL, refR, NaL, NaR, n_steps, dt, acc):
    """Closed-loop integration for ``n_steps``; stops early on depletion.

    Returns the number of steps taken, or ``-1 - i`` if the state went
    non-finite at step ``i``.
    """
    for i in range(n_steps):
        if is_depleted(x, P):
            acc[A_DEPLETED] = 1.0
            return i
        VL, VR = control(x, mem, P, gains, refL, refR)
        step(x, VL, VR, NaL, NaR, dt, P, acc)
        for j in range(8):
            if not math.isfinite(x[j]):
                return -1 - i
    return n_steps


@njit(cache=True)
def rollout_objective(x0, mem0, P, gains, refL, refR, NaL, NaR, H, sample_steps, dt):
    """Sum over h = 0..H of the per-group motor efficiency (both groups).

    Rolls the closed loop forward on copies of the state and PID memory.
    """
    x = x0.copy()
    mem = mem0.copy()
    acc = np.zeros(N_ACC)
    total = 0.0
    for h in range(H + 1):
        VL, VR = control(x, mem, P, gains, refL, refR)
        vmax = supply_voltage(x, P)
        VL = clamp(VL, -vmax, vmax)
        VR = clamp(VR, -vmax, vmax)
        r = P[P_R]
        a = P[P_A]
        phiL = (x[5] - 0.5 * a * x[6]) / r
        phiR = (x[5] + 0.5 * a * x[6]) / r
        if NaL > 0:
            IaL = armature_current(VL, phiL, P)
            total += efficiency(VL, IaL, motor_torque(IaL, phiL, P), phiL)
        if NaR > 0:
            IaR = armature_current(VR, phiR, P)
            total += efficiency(VR, IaR, motor_torque(IaR, phiR, P), phiR)
        if h == H:
            break
        step(x, VL, VR, NaL, NaR, dt, P, acc)
        for i in range(sample_steps - 1):
            VL, VR = control(x, mem, P, gains, refL, refR)
            step(x, VL, VR, NaL, NaR, dt, P, acc)
    return total


@njit(cache=True)
def required_voltages(P, NaL, NaR, refL, refR, scale):
    """Steady-state group voltages needed to hold ``scale`` times the wheel-speed
    reference with the given active counts.  ``inf`` when a group with no
    active motor would have to supply torque."""
    r = P[P_R]
    a = P[P_A]
    half = 0.5 * P[P_N]
    phiL = scale * refL
    phiR = scale * refR
    vx = 0.5 * r * (phiL + phiR)
    w = r * (phiR - phiL) / a
    fx, fy, mr = friction(vx, w, P)
    # torque balance of pseudo_accel with vdot = wdot = 0
    s = r * fx
    d = 2.0 * r * mr / a
    effL = 0.5 * (s - d)
    effR = 0.5 * (s + d)
    out = np.empty(2)
    for k in range(2):
        eff = effL if k == 0 else effR
        phi = phiL if k == 0 else phiR
        na = NaL if k == 0 else NaR
        tau = eff + (half - na) * P[P_BD] * phi
        if na <= 0.0:
            out[k] = 0.0 if abs(tau) < 1e-12 else np.inf
            continue
        per = tau / na
        Ia = (per + P[P_BD] * phi + P[P_KT] * P[P_I0] * smooth_sign(phi * r, P[P_KS])) / P[P_KT]
        out[k] = P[P_KE] * phi + Ia * P[P_OHM]
    return out
