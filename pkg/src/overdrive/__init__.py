"""Simulation and control of an over-actuated multi-wheel skid-steer vehicle
that powers only as many wheel-motor agents as it needs."""

__version__ = "0.1.0"

from .controllers import (AllocationDecision, BadCount, InfeasibleLoad, PidGains, Schedule,  # noqa: E402
                          choose_active_counts, pid_voltage, schedule_tick, select_active_set)
from .core import (BatteryParams, MotorParams, ParamBundle, ParameterError, SimState, SystemParams,  # noqa: E402
                   UnknownPreset, preset, validate, validate_params)
from .dynamics import NumericalDivergence  # noqa: E402
from .harness import (EC, NO, RunMetrics, Scenario, battery_endurance, idle_time_study, run,  # noqa: E402
                      sweep_agents, sweep_weights, voltage_study)

__all__ = [
    "AllocationDecision", "BadCount", "InfeasibleLoad", "PidGains", "Schedule", "choose_active_counts",
    "pid_voltage", "schedule_tick", "select_active_set", "BatteryParams", "MotorParams", "ParamBundle",
    "ParameterError", "SimState", "SystemParams", "UnknownPreset", "preset", "validate", "validate_params",
    "NumericalDivergence", "EC", "NO", "RunMetrics", "Scenario", "battery_endurance", "idle_time_study",
    "run", "sweep_agents", "sweep_weights", "voltage_study",
]
