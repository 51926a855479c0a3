"""Skid-steer kinematics: body pseudo-velocities to wheel and pose rates."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Pose, PseudoVelocity, SystemParams


@dataclass(frozen=True)
class WheelVelocities:
    """Longitudinal group speeds and lateral speeds of the four wheel rows (m/s)."""

    v_L: float
    v_R: float
    v_A1: float
    v_A2: float
    v_B1: float
    v_B2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v_L, self.v_R, self.v_A1, self.v_A2, self.v_B1, self.v_B2])


def wheel_map(p: SystemParams) -> np.ndarray:
    """The 6x2 map from (v_x, omega) to wheel velocities."""
    a, b = p.track_width, p.wheel_spacing
    return np.array([
        [1.0, -a / 2],
        [1.0, a / 2],
        [0.0, 3 * b / 2],
        [0.0, b / 2],
        [0.0, -b / 2],
        [0.0, -3 * b / 2],
    ])


def wheel_velocities(nu: PseudoVelocity, p: SystemParams) -> WheelVelocities:
    return WheelVelocities(*(wheel_map(p) @ np.array([nu.v_x, nu.omega])))


def constraint_matrix(q: Pose, p: SystemParams) -> np.ndarray:
    """S(q) with the wheel rows scaled by 1/r so that wheel rates come out in rad/s."""
    a, r = p.track_width, p.wheel_radius
    c, s = math.cos(q.theta), math.sin(q.theta)
    return np.array([
        [c, 0.0],
        [s, 0.0],
        [0.0, 1.0],
        [1.0 / r, -a / (2 * r)],
        [1.0 / r, a / (2 * r)],
    ])


def pose_rate(q: Pose, nu: PseudoVelocity, p: SystemParams) -> np.ndarray:
    return constraint_matrix(q, p) @ np.array([nu.v_x, nu.omega])


def wheel_rates(nu: PseudoVelocity, p: SystemParams) -> tuple[float, float]:
    """(phidot_L, phidot_R) in rad/s."""
    a, r = p.track_width, p.wheel_radius
    return (nu.v_x - a * nu.omega / 2) / r, (nu.v_x + a * nu.omega / 2) / r


def pseudo_from_wheel_rates(phidot_L: float, phidot_R: float, p: SystemParams) -> PseudoVelocity:
    """Inverse of :func:`wheel_rates`."""
    a, r = p.track_width, p.wheel_radius
    return PseudoVelocity(r * (phidot_L + phidot_R) / 2, r * (phidot_R - phidot_L) / a)


def integrate_pose(q: Pose, nu: PseudoVelocity, dt: float, p: SystemParams) -> Pose:
    """Explicit update with nu held over the step.  theta is left unwrapped."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    dq = pose_rate(q, nu, p) * dt
    return Pose(q.X + dq[0], q.Y + dq[1], q.theta + dq[2], q.phi_L + dq[3], q.phi_R + dq[4])
