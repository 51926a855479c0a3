"""Friction loads, motor-integrated pseudo-accelerations and the ZOH step.

The arithmetic lives in :mod:`overdrive._kernel` so the run loop and these
functions share one implementation; this module adapts it to the typed state.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from . import _kernel as K
from .core import MotorParams, ParamBundle, Pose, PseudoVelocity, SimState, SystemParams


class NumericalDivergence(FloatingPointError):
    pass


@dataclass(frozen=True)
class FrictionLoads:
    """World-frame resisting forces and yaw moment (positive along the motion)."""

    F_rx: float
    F_ry: float
    M_r: float


@dataclass(frozen=True)
class GroupTorques:
    tau_L: float
    tau_R: float
    n_active_L: int
    n_active_R: int
    current_L: float = 0.0
    current_R: float = 0.0


def params_vector(bundle: ParamBundle, literal: bool = False, battery: bool = False) -> np.ndarray:
    return K.pack_params(bundle, literal=literal, battery=battery)


def _bundle(p: SystemParams, mp: MotorParams | None = None) -> ParamBundle:
    from .core import TYPE_I

    return ParamBundle(p, mp if mp is not None else TYPE_I)


def state_vector(state: SimState) -> np.ndarray:
    q, nu = state.pose, state.nu
    return np.array([q.X, q.Y, q.theta, q.phi_L, q.phi_R, nu.v_x, nu.omega, state.discharge])


def friction_loads(state: SimState, p: SystemParams) -> FrictionLoads:
    P = params_vector(_bundle(p))
    fx, fy, mr = K.friction(state.nu.v_x, state.nu.omega, P)
    c, s = math.cos(state.pose.theta), math.sin(state.pose.theta)
    return FrictionLoads(fx * c - fy * s, fx * s + fy * c, mr)


def group_torques(voltages, state: SimState, mp: MotorParams, p: SystemParams) -> GroupTorques:
    """Group torques for per-group voltages, clamped to the rated voltage."""
    P = params_vector(_bundle(p, mp))
    vmax = mp.rated_voltage
    VL = min(max(voltages[0], -vmax), vmax)
    VR = min(max(voltages[1], -vmax), vmax)
    nl, nr = state.n_active("L"), state.n_active("R")
    IaL, IaR, tL, tR = K.group_torques(state.nu.v_x, state.nu.omega, VL, VR, nl, nr, P)
    return GroupTorques(tL, tR, nl, nr, IaL, IaR)


def pseudo_accel(state: SimState, torques: GroupTorques, p: SystemParams, mp: MotorParams,
                 literal: bool = False) -> tuple[float, float]:
    """(vdot_x, omega_dot).  ``literal`` selects the denominators exactly as printed
    (wheel inertia added to mass without the 1/r^2 reflection)."""
    P = params_vector(_bundle(p, mp), literal=literal)
    return K.accel_from_torques(state.nu.v_x, state.nu.omega, torques.tau_L, torques.tau_R,
                                torques.n_active_L, torques.n_active_R, P)


def kinetic_energy(state: SimState, p: SystemParams) -> float:
    """Translational, yaw and wheel-spin kinetic energy."""
    v, w = state.nu.v_x, state.nu.omega
    a, r = p.track_width, p.wheel_radius
    phiL = (v - a * w / 2) / r
    phiR = (v + a * w / 2) / r
    half = p.n_group
    return 0.5 * (p.mass * v * v + p.I_zz * w * w + half * p.I_w * (phiL**2 + phiR**2))


def step(state: SimState, voltages, dt: float, bundle: ParamBundle,
         literal: bool = False, battery: bool = False) -> SimState:
    """Advance one ZOH step and return a new state.

    Every wheel's odometer advances with its group speed; active agents also
    accumulate on-time and powered distance.  Discharge grows by the charge
    drawn by active motors.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    P = params_vector(bundle, literal=literal, battery=battery)
    x = state_vector(state)
    acc = np.zeros(K.N_ACC)
    nl, nr = state.n_active("L"), state.n_active("R")
    K.step(x, float(voltages[0]), float(voltages[1]), nl, nr, dt, P, acc)
    if not np.all(np.isfinite(x)):
        raise NumericalDivergence(f"non-finite state at t={state.time + dt:.6g}s")
    new = copy.deepcopy(state)
    new.pose = Pose(*x[:5])
    new.nu = PseudoVelocity(x[5], x[6])
    new.discharge = x[7]
    new.time = state.time + dt
    dist = {"L": acc[K.A_DIST_L], "R": acc[K.A_DIST_R]}
    cur = {"L": acc[K.A_IA_L], "R": acc[K.A_IA_R]}
    for ag in new.agents:
        ag.distance += dist[ag.group]
        if ag.active:
            ag.active_distance += dist[ag.group]
            ag.continuous_on_time += dt
            ag.cumulative_on_steps += 1
            ag.current = cur[ag.group]
        else:
            ag.continuous_on_time = 0.0
            ag.current = 0.0
    return new
