"""Parameter records, simulation state types and presets.

Everything is SI internally: rad/s for shaft speeds, N*m for torques, A for
currents.  rpm / mN*m / mA only appear at the config-file boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

RPM = 2.0 * math.pi / 60.0


class ParameterError(ValueError):
    """A parameter bundle violates one of its invariants."""

    def __init__(self, name: str, message: str = ""):
        self.name = name
        super().__init__(f"{name}: {message}" if message else name)


class UnknownPreset(KeyError):
    pass


@dataclass(frozen=True)
class SystemParams:
    """Mechanical and friction constants of the vehicle.

    ``chassis_mass`` lumps everything that is not payload (frame, wheels,
    motors, electronics); the gross mass used by the dynamics is
    ``chassis_mass + payload_mass``.
    """

    n_total: int = 16
    chassis_mass: float = 3.2
    payload_mass: float = 10.0
    wheel_mass: float = 0.05
    track_width: float = 0.2
    wheel_spacing: float = 0.08
    wheel_radius: float = 0.035
    mu_s: float = 0.01
    mu_l: float = 0.1
    k_s: float = 1000.0
    g: float = 9.81
    yaw_inertia: Optional[float] = None
    wheel_inertia: Optional[float] = None

    @property
    def mass(self) -> float:
        return self.chassis_mass + self.payload_mass

    @property
    def n_group(self) -> int:
        return self.n_total // 2

    @property
    def I_w(self) -> float:
        if self.wheel_inertia is not None:
            return self.wheel_inertia
        return 0.5 * self.wheel_mass * self.wheel_radius**2

    @property
    def I_zz(self) -> float:
        if self.yaw_inertia is not None:
            return self.yaw_inertia
        a, b = self.track_width, self.wheel_spacing
        return self.mass * (a**2 + (3.0 * b) ** 2) / 12.0

    def with_gross_mass(self, gross: float) -> "SystemParams":
        return replace(self, payload_mass=gross - self.chassis_mass)


@dataclass(frozen=True)
class MotorParams:
    rated_voltage: float
    no_load_current: float
    no_load_speed: float  # rad/s
    stall_torque: float
    armature_resistance: float
    viscous_coeff: float
    torque_constant: float
    back_emf_constant: float
    mass: float = 0.0


@dataclass(frozen=True)
class BatteryParams:
    """Two-term exponential discharge curve ``V = h e^(w d) + y e^(z d)``.

    ``d`` is in mAh.  One pack feeds each motor group, so the voltage is
    evaluated at the per-pack discharge ``total / n_packs``.
    """

    h: float = -1.851e-14
    w: float = 0.005345
    y: float = 23.4
    z: float = -1.018e-5
    capacity: float = 6395.0
    cutoff_fraction: float = 0.6
    n_packs: int = 2


@dataclass(frozen=True)
class ParamBundle:
    system: SystemParams
    motor: MotorParams
    battery: BatteryParams = field(default_factory=BatteryParams)


TYPE_I = MotorParams(
    rated_voltage=24.0,
    no_load_current=0.050,
    no_load_speed=5930 * RPM,
    stall_torque=0.130,
    armature_resistance=7.03,
    viscous_coeff=6e-7,
    torque_constant=38.2e-3,
    back_emf_constant=38.4e-3,
    mass=0.21,
)

TYPE_II = MotorParams(
    rated_voltage=6.0,
    no_load_current=0.250,
    no_load_speed=5500 * RPM,
    stall_torque=17.6e-3,
    armature_resistance=2.4,
    viscous_coeff=2.2e-7,
    torque_constant=7e-3,
    back_emf_constant=7e-3,
    mass=0.11,
)

PRESETS = {
    "type1_16": lambda: ParamBundle(SystemParams(n_total=16), TYPE_I),
    "type1_32": lambda: ParamBundle(SystemParams(n_total=32), TYPE_I),
    "type1_64": lambda: ParamBundle(SystemParams(n_total=64), TYPE_I),
    "type2_12": lambda: ParamBundle(SystemParams(n_total=12), TYPE_II),
}


def preset(name: str) -> ParamBundle:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise UnknownPreset(name) from None
    return factory()


def _finite(x) -> bool:
    return x is not None and math.isfinite(x)


# Type-I reproduces its listed stall torque to ~1%, Type-II only to ~11%.
STALL_TOLERANCE = 0.15


def validate_params(p: SystemParams, m: MotorParams, b: BatteryParams) -> ParamBundle:
    """Check every invariant; raise ParameterError naming the first violation."""
    checks = [
        ("n_total", isinstance(p.n_total, (int, np.integer)) and p.n_total >= 2 and p.n_total % 2 == 0),
        ("track_width", _finite(p.track_width) and p.track_width > 0),
        ("wheel_spacing", _finite(p.wheel_spacing) and p.wheel_spacing > 0),
        ("wheel_radius", _finite(p.wheel_radius) and p.wheel_radius > 0),
        ("chassis_mass", _finite(p.chassis_mass) and p.chassis_mass >= 0),
        ("payload_mass", _finite(p.payload_mass) and p.payload_mass >= 0),
        ("wheel_mass", _finite(p.wheel_mass) and p.wheel_mass >= 0),
        ("gross_mass", p.mass > 0),
        ("mu_s", _finite(p.mu_s) and p.mu_s >= 0),
        ("mu_l", _finite(p.mu_l) and p.mu_l >= 0),
        ("k_s", _finite(p.k_s) and p.k_s >= 100),
        ("g", _finite(p.g) and p.g > 0),
        ("yaw_inertia", p.yaw_inertia is None or (_finite(p.yaw_inertia) and p.yaw_inertia > 0)),
        ("wheel_inertia", p.wheel_inertia is None or (_finite(p.wheel_inertia) and p.wheel_inertia >= 0)),
    ]
    for f in fields(MotorParams):
        if f.name == "mass":
            checks.append(("motor_mass", _finite(m.mass) and m.mass >= 0))
        else:
            val = getattr(m, f.name)
            checks.append((f.name, _finite(val) and val > 0))
    stall_model = m.torque_constant * (m.rated_voltage / m.armature_resistance - m.no_load_current)
    checks.append(("stall_torque", abs(stall_model - m.stall_torque) <= STALL_TOLERANCE * m.stall_torque))
    v0 = b.h + b.y
    v_end = b.h * math.exp(b.w * b.capacity) + b.y * math.exp(b.z * b.capacity) if _finite(b.capacity) else math.nan
    checks += [
        ("battery_capacity", _finite(b.capacity) and b.capacity > 0),
        ("battery_voltage", v0 > 0 and math.isfinite(v_end)),
        ("battery_cutoff_fraction", _finite(b.cutoff_fraction) and 0 <= b.cutoff_fraction < 1),
        ("battery_packs", isinstance(b.n_packs, (int, np.integer)) and b.n_packs >= 1),
    ]
    for name, ok in checks:
        if not ok:
            raise ParameterError(name, "invariant violated")
    return ParamBundle(p, m, b)


def validate(bundle: ParamBundle) -> ParamBundle:
    return validate_params(bundle.system, bundle.motor, bundle.battery)


# --- state types -----------------------------------------------------------


@dataclass(frozen=True)
class Pose:
    X: float = 0.0
    Y: float = 0.0
    theta: float = 0.0
    phi_L: float = 0.0
    phi_R: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.X, self.Y, self.theta, self.phi_L, self.phi_R])


@dataclass(frozen=True)
class PseudoVelocity:
    v_x: float = 0.0
    omega: float = 0.0


@dataclass
class AgentState:
    """Bookkeeping for one wheel-motor pair.

    ``distance`` is the odometer (wheels always roll); ``active_distance``
    only grows while the motor is powered and is what wear levelling uses.
    """

    id: int
    group: str
    active: bool = True
    distance: float = 0.0
    active_distance: float = 0.0
    continuous_on_time: float = 0.0
    cumulative_on_steps: int = 0
    current: float = 0.0


@dataclass(frozen=True)
class MotorPoint:
    voltage: float
    current: float
    torque: float
    speed: float
    efficiency: float


@dataclass
class SimState:
    pose: Pose
    nu: PseudoVelocity
    agents: list
    discharge: float = 0.0
    time: float = 0.0
    # [E_L, e_prev_L, E_R, e_prev_R]
    pid_memory: np.ndarray = field(default_factory=lambda: np.zeros(4))

    @classmethod
    def initial(cls, n_total: int, active: bool = True) -> "SimState":
        half = n_total // 2
        agents = [AgentState(i, "L" if i < half else "R", active) for i in range(n_total)]
        return cls(Pose(), PseudoVelocity(), agents)

    def group(self, g: str) -> list:
        return [ag for ag in self.agents if ag.group == g]

    def n_active(self, g: str) -> int:
        return sum(ag.active for ag in self.agents if ag.group == g)

    def set_counts(self, n_l: int, n_r: int) -> None:
        """Activate the lowest-id agents of each group (mask-free shortcut)."""
        for g, n in (("L", n_l), ("R", n_r)):
            for k, ag in enumerate(self.group(g)):
                ag.active = k < n
