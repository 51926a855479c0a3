"""Motor operating points, characteristic curves and battery bookkeeping."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import RPM, BatteryParams, MotorParams, MotorPoint


def motor_point(V: float, phidot: float, mp: MotorParams) -> MotorPoint:
    """Operating point of a single motor at voltage ``V`` and shaft speed ``phidot``."""
    Ia = (V - mp.back_emf_constant * phidot) / mp.armature_resistance
    drag = mp.torque_constant * mp.no_load_current * (1.0 if phidot > 0 else -1.0 if phidot < 0 else 0.0)
    tau = mp.torque_constant * Ia - drag - mp.viscous_coeff * phidot
    p_in, p_out = V * Ia, tau * phidot
    eta = 0.0 if p_in <= 0 or p_out < 0 else min(p_out / p_in, 1.0)
    return MotorPoint(V, Ia, tau, phidot, eta)


def speed_at_torque(V: float, tau: float, mp: MotorParams) -> float:
    """Invert the linear speed-torque line; 0 beyond stall."""
    kt, ke, R = mp.torque_constant, mp.back_emf_constant, mp.armature_resistance
    phidot = (kt * V / R - kt * mp.no_load_current - tau) / (kt * ke / R + mp.viscous_coeff)
    return max(phidot, 0.0)


def efficiency_curve(mp: MotorParams, V: float, n: int = 2001) -> tuple[np.ndarray, np.ndarray]:
    """Torque samples over (0, stall] and the efficiency at each."""
    taus = np.linspace(mp.stall_torque / n, mp.stall_torque, n)
    etas = np.array([motor_point(V, speed_at_torque(V, t, mp), mp).efficiency for t in taus])
    return taus, etas


def peak_efficiency(mp: MotorParams, V: float | None = None, n: int = 20001) -> tuple[float, float]:
    """(eta_max, torque at eta_max) along the speed-torque line at ``V``."""
    V = mp.rated_voltage if V is None else V
    taus, etas = efficiency_curve(mp, V, n)
    k = int(np.argmax(etas))
    return float(etas[k]), float(taus[k])


def characteristic_surface(mp: MotorParams, v_grid: Iterable[float], tau_grid: Iterable[float]) -> list[tuple]:
    """Rows ``(V, tau, phidot, eta)`` over the voltage x torque grid."""
    v_grid, tau_grid = list(v_grid), list(tau_grid)
    if not v_grid or not tau_grid:
        raise ValueError("empty grid")
    rows = []
    for V in v_grid:
        for tau in tau_grid:
            phidot = speed_at_torque(V, tau, mp)
            rows.append((V, tau, phidot, motor_point(V, phidot, mp).efficiency))
    return rows


def write_surface_csv(rows, path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["V", "tau_mNm", "speed_rpm", "eta"])
        for V, tau, phidot, eta in rows:
            w.writerow([f"{V:.6g}", f"{tau * 1e3:.6g}", f"{phidot / RPM:.6g}", f"{eta:.6g}"])


# --- battery ---------------------------------------------------------------


def battery_voltage(d_B: float, bp: BatteryParams) -> float:
    """Terminal voltage of one pack after ``d_B`` mAh of discharge."""
    return bp.h * math.exp(bp.w * d_B) + bp.y * math.exp(bp.z * d_B)


@dataclass(frozen=True)
class BatteryState:
    discharge: float = 0.0  # total over all packs, mAh
    voltage: float = 23.4
    depleted: bool = False

    @classmethod
    def fresh(cls, bp: BatteryParams) -> "BatteryState":
        return cls(0.0, battery_voltage(0.0, bp), False)


def accumulate_discharge(bs: BatteryState, currents, n_active, dt: float, bp: BatteryParams,
                         rated_voltage: float = 24.0) -> BatteryState:
    """Coulomb counting: add ``sum(N_a * I_a) * dt`` (A*s -> mAh).

    Regenerative currents are not credited back.  ``depleted`` latches once
    the per-pack voltage drops below ``cutoff_fraction * rated_voltage``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    drawn = sum(n * max(i, 0.0) for i, n in zip(currents, n_active))
    d = bs.discharge + drawn * dt / 3.6
    per_pack = d / bp.n_packs
    v = battery_voltage(per_pack, bp)
    depleted = bs.depleted or v < bp.cutoff_fraction * rated_voltage or per_pack >= bp.capacity
    return BatteryState(d, v, depleted)
