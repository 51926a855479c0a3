"""Flat TOML configuration: one key per parameter, units in the key name.

The writer always emits SI keys so that a dump/load round trip is
bit-identical.  The reader also accepts a few convenience aliases in the
units used by motor datasheets (rpm, mN*m, mA) and ``gross_mass_kg`` in place
of ``payload_mass_kg``.
"""
from __future__ import annotations

import re
import sys
from dataclasses import fields, replace
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import RPM, BatteryParams, MotorParams, ParamBundle, SystemParams
from .harness import Scenario


class ConfigError(ValueError):
    """Bad configuration; ``key`` and ``line`` locate the problem when known."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


# config key -> dataclass field
SYSTEM_KEYS = {
    "n_total": "n_total",
    "chassis_mass_kg": "chassis_mass",
    "payload_mass_kg": "payload_mass",
    "wheel_mass_kg": "wheel_mass",
    "track_width_m": "track_width",
    "wheel_spacing_m": "wheel_spacing",
    "wheel_radius_m": "wheel_radius",
    "mu_s": "mu_s",
    "mu_l": "mu_l",
    "k_s_s_per_m": "k_s",
    "g_m_s2": "g",
    "yaw_inertia_kg_m2": "yaw_inertia",
    "wheel_inertia_kg_m2": "wheel_inertia",
}
MOTOR_KEYS = {
    "rated_voltage_V": "rated_voltage",
    "no_load_current_A": "no_load_current",
    "no_load_speed_rad_s": "no_load_speed",
    "stall_torque_Nm": "stall_torque",
    "armature_resistance_ohm": "armature_resistance",
    "viscous_coeff_Nms": "viscous_coeff",
    "torque_constant_Nm_A": "torque_constant",
    "back_emf_constant_V_s_rad": "back_emf_constant",
    "motor_mass_kg": "mass",
}
BATTERY_KEYS = {
    "battery_h_V": "h",
    "battery_w_per_mAh": "w",
    "battery_y_V": "y",
    "battery_z_per_mAh": "z",
    "battery_capacity_mAh": "capacity",
    "battery_cutoff_fraction": "cutoff_fraction",
    "battery_packs": "n_packs",
}
SCENARIO_KEYS = {
    "v_ref_m_s": "v_ref",
    "omega_ref_rad_s": "omega_ref",
    "segments": "segments",
    "duration_s": "duration",
    "dt_s": "dt",
    "mode": "mode",
    "battery": "battery",
    "method": "method",
    "ramp_m_s2": "ramp",
    "dynamics": "literal",
    "kp_V_s_rad": None,
    "ki_V_rad": None,
    "kd_V_s2_rad": None,
    "horizon": "horizon",
    "horizon_dt_s": "horizon_dt",
    "rollout_dt_s": "rollout_dt",
    "l2_period_s": "l2_period",
    "settle_band": "settle_band",
    "t_on_s": "t_on",
    "thermal_limit_s": "thermal_limit",
    "thermal_current_A": "thermal_current",
    "shortfall_tol": "shortfall_tol",
    "on_infeasible": "on_infeasible",
    "supply_voltage_V": "supply_voltage",
    "trace_dt_s": "trace_dt",
}
# alias -> (canonical key, multiplier to SI)
ALIASES = {
    "no_load_speed_rpm": ("no_load_speed_rad_s", RPM),
    "stall_torque_mNm": ("stall_torque_Nm", 1e-3),
    "no_load_current_mA": ("no_load_current_A", 1e-3),
    "viscous_coeff_mNms": ("viscous_coeff_Nms", 1e-3),
}
OPTIONAL = {"yaw_inertia_kg_m2", "wheel_inertia_kg_m2", "motor_mass_kg"}
REQUIRED = [k for k in list(SYSTEM_KEYS) + list(MOTOR_KEYS) if k not in OPTIONAL]
DYNAMICS = {"corrected": False, "paper-literal": True}


def _line_of(text: str, key: str) -> int | None:
    m = re.search(rf"^\s*{re.escape(key)}\s*=", text, re.MULTILINE)
    return text.count("\n", 0, m.start()) + 1 if m else None


def parse(text: str) -> Scenario:
    """Build a Scenario from configuration text."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            m = re.search(r"line (\d+)", str(exc))
            line = int(m.group(1)) if m else None
        raise ConfigError(f"parse error: {exc}", line=line) from None
    data = {}
    for key, val in raw.items():
        if isinstance(val, dict):
            raise ConfigError("tables are not allowed; the config is flat", key, _line_of(text, key))
        if key in ALIASES:
            canon, mult = ALIASES[key]
            if canon in raw:
                raise ConfigError(f"both '{key}' and '{canon}' given", key, _line_of(text, key))
            if not isinstance(val, (int, float)) or isinstance(val, bool):
                raise ConfigError(f"wrong type {type(val).__name__}", key, _line_of(text, key))
            data[canon] = val * mult
        elif key == "gross_mass_kg":
            if "payload_mass_kg" in raw:
                raise ConfigError("give either gross_mass_kg or payload_mass_kg", key, _line_of(text, key))
            data[key] = val
        elif key in SYSTEM_KEYS or key in MOTOR_KEYS or key in BATTERY_KEYS or key in SCENARIO_KEYS:
            data[key] = val
        else:
            raise ConfigError("unknown key", key, _line_of(text, key))
    _check_types(text, data)
    if "gross_mass_kg" in data:
        if "chassis_mass_kg" not in data:
            raise ConfigError("missing key", "chassis_mass_kg")
        data["payload_mass_kg"] = data.pop("gross_mass_kg") - data["chassis_mass_kg"]
    for key in REQUIRED:
        if key not in data:
            raise ConfigError("missing key", key)

    def pick(table, cls, defaults=None):
        kw = {}
        for key, attr in table.items():
            if key in data:
                kw[attr] = data[key]
        try:
            return replace(defaults, **kw) if defaults is not None else cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    system = pick(SYSTEM_KEYS, SystemParams)
    motor = pick(MOTOR_KEYS, MotorParams)
    battery = pick(BATTERY_KEYS, BatteryParams, BatteryParams())

    kw = {}
    for key, attr in SCENARIO_KEYS.items():
        if key not in data or attr is None:
            continue
        val = data[key]
        if key == "dynamics":
            if val not in DYNAMICS:
                raise ConfigError(f"dynamics must be one of {sorted(DYNAMICS)}", key, _line_of(text, key))
            val = DYNAMICS[val]
        elif key == "segments":
            val = tuple(tuple(float(v) for v in seg) for seg in val)
            if any(len(seg) != 3 for seg in val):
                raise ConfigError("segments are [duration_s, v_m_s, omega_rad_s] triples", key,
                                  _line_of(text, key))
        kw[attr] = val
    g = Scenario().gains
    kw["gains"] = (float(data.get("kp_V_s_rad", g[0])), float(data.get("ki_V_rad", g[1])),
                   float(data.get("kd_V_s2_rad", g[2])))
    return Scenario(bundle=ParamBundle(system, motor, battery), **kw)


def _check_types(text: str, data: dict) -> None:
    ints = {"n_total", "battery_packs", "horizon"}
    strs = {"mode", "method", "dynamics", "on_infeasible"}
    bools = {"battery"}
    for key, val in data.items():
        if key in ints:
            ok = isinstance(val, int) and not isinstance(val, bool)
        elif key in strs:
            ok = isinstance(val, str)
        elif key in bools:
            ok = isinstance(val, bool)
        elif key == "segments":
            ok = isinstance(val, list)
        else:
            ok = isinstance(val, (int, float)) and not isinstance(val, bool)
        if not ok:
            raise ConfigError(f"wrong type {type(val).__name__}", key, _line_of(text, key))


def load(path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse(text)


def to_dict(sc: Scenario) -> dict:
    """Flat SI dictionary for ``sc``; ``None`` fields are omitted."""
    out = {}
    b = sc.bundle
    for table, rec in ((SYSTEM_KEYS, b.system), (MOTOR_KEYS, b.motor), (BATTERY_KEYS, b.battery)):
        for key, attr in table.items():
            val = getattr(rec, attr)
            if val is not None:
                out[key] = val
    for key, attr in SCENARIO_KEYS.items():
        if attr is None:
            continue
        val = getattr(sc, attr)
        if key == "dynamics":
            val = "paper-literal" if val else "corrected"
        elif key == "segments" and val is not None:
            val = [list(seg) for seg in val]
        if val is not None:
            out[key] = val
    out["kp_V_s_rad"], out["ki_V_rad"], out["kd_V_s2_rad"] = (float(v) for v in sc.gains)
    return out


def dumps(sc: Scenario) -> str:
    return tomli_w.dumps(to_dict(sc))


def save(sc: Scenario, path) -> None:
    Path(path).write_text(dumps(sc))


# every dataclass field must be reachable from some key
assert {f.name for f in fields(SystemParams)} == set(SYSTEM_KEYS.values())
assert {f.name for f in fields(MotorParams)} == set(MOTOR_KEYS.values())
assert {f.name for f in fields(BatteryParams)} == set(BATTERY_KEYS.values())
