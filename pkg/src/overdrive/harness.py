"""Experiment runs: the closed loop plus metric bookkeeping, and the sweeps
built on top of it.

The inner loop integrates in compiled chunks of ``trace_dt`` (10 Hz by
default); Level 2 runs every ``l2_period`` and Level 3 whenever Level 2 runs.
Per-agent bookkeeping is kept in numpy arrays.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import _kernel as K
from .controllers import (DEFAULT_GAINS, GROUPS, AllocationDecision, InfeasibleLoad, PidGains,
                          Schedule, allocate_enumerate, allocate_sqp, build_problem, schedule_tick)
from .core import AgentState, ParamBundle, Pose, PseudoVelocity, SimState, preset, validate
from .dynamics import NumericalDivergence

EC = "energy_conscious"
NO = "no_optimization"
MODES = (EC, NO)

TABLE2_WEIGHTS = (13.2, 18.2, 23.2, 28.2, 33.2, 38.2)


@dataclass(frozen=True)
class Scenario:
    """One closed-loop experiment.

    ``segments`` optionally replaces the straight line with piecewise
    ``(duration_s, v_ref, omega_ref)`` legs (the last leg is held).  The
    speed reference ramps at ``ramp`` m/s^2 (``0`` for a step).
    ``supply_voltage`` caps the bus below the motor rating.
    """

    bundle: ParamBundle = field(default_factory=lambda: preset("type1_16"))
    v_ref: float = 19.1
    omega_ref: float = 0.0
    segments: Optional[tuple] = None
    duration: float = 1800.0
    dt: float = 1e-3
    mode: str = EC
    battery: bool = False
    method: str = "enumerate"
    ramp: float = 0.5
    literal: bool = False
    gains: tuple = DEFAULT_GAINS
    horizon: int = 10
    horizon_dt: float = 0.1
    rollout_dt: float = 0.01
    l2_period: float = 1.0
    settle_band: float = 0.02
    t_on: float = 100.0
    thermal_limit: float = 600.0
    thermal_current: float = 1.0
    shortfall_tol: float = 0.0
    on_infeasible: str = "saturate"
    supply_voltage: Optional[float] = None
    trace_dt: float = 0.1

    def with_gross_mass(self, gross: float) -> "Scenario":
        b = self.bundle
        return replace(self, bundle=replace(b, system=b.system.with_gross_mass(gross)))

    def with_agents(self, n: int) -> "Scenario":
        b = self.bundle
        return replace(self, bundle=replace(b, system=replace(b.system, n_total=n)))

    def validate(self) -> "Scenario":
        validate(self.bundle)
        if self.supply_voltage is not None and not 0 < self.supply_voltage <= self.bundle.motor.rated_voltage:
            raise ValueError("supply_voltage must be in (0, rated_voltage]")
        if not self.duration >= 0:
            raise ValueError("duration must be >= 0")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.method not in ("enumerate", "sqp"):
            raise ValueError("method must be 'enumerate' or 'sqp'")
        if self.on_infeasible not in ("saturate", "raise"):
            raise ValueError("on_infeasible must be 'saturate' or 'raise'")
        for name in ("trace_dt", "l2_period"):
            ratio = getattr(self, name) / (self.dt if name == "trace_dt" else self.trace_dt)
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                raise ValueError(f"{name} must be a whole multiple of the step below it")
        return self

    def effective_bundle(self) -> ParamBundle:
        """The bundle the kernel sees: a reduced bus acts as a lower voltage ceiling."""
        if self.supply_voltage is None:
            return self.bundle
        return replace(self.bundle, motor=replace(self.bundle.motor, rated_voltage=self.supply_voltage))

    def reference(self, t: float) -> tuple[float, float]:
        """(v, omega) reference at time ``t``."""
        if self.segments:
            t0 = 0.0
            v, w = self.segments[-1][1], self.segments[-1][2]
            for dur, sv, sw in self.segments:
                if t < t0 + dur:
                    v, w = sv, sw
                    break
                t0 += dur
        else:
            v, w = self.v_ref, self.omega_ref
        if self.ramp and self.ramp > 0:
            v = math.copysign(min(abs(v), self.ramp * t), v)
        return v, w

    def target(self, t: float) -> tuple[float, float]:
        """The un-ramped reference."""
        return replace(self, ramp=0.0).reference(t)


@dataclass
class RunMetrics:
    energy: float  # J
    distance: float  # m
    duration: float  # s simulated
    steps: int
    depleted: bool
    charge_mAh: float
    energy_vdq: float  # J, from the coulomb count times voltage
    n_total: int
    t_on: float
    dt: float
    on_steps: np.ndarray  # per agent
    active_distance: np.ndarray  # per agent, m
    odometer: np.ndarray  # per agent, m
    traces: dict  # 10 Hz columns
    schedule_log: list  # (time_s, group, mask_hex)
    infeasible_events: int = 0

    @property
    def mileage_defined(self) -> bool:
        return self.energy > 0

    @property
    def mileage(self) -> float:
        """m/J; reported as 0 when no energy was used (see ``mileage_defined``)."""
        return self.distance / self.energy if self.energy > 0 else 0.0

    @property
    def idle_steps(self) -> np.ndarray:
        """Per-agent idle time in integration steps."""
        return self.steps - self.on_steps

    @property
    def idle_windows(self) -> np.ndarray:
        """Per-agent idle time in schedule windows (1 step = T_ON)."""
        return self.idle_steps * self.dt / self.t_on

    def normalized_active_distance(self) -> np.ndarray:
        return self.active_distance / self.distance if self.distance > 0 else np.zeros_like(self.active_distance)

    def active_total(self) -> np.ndarray:
        return self.traces["n_active_L"] + self.traces["n_active_R"]

    def steady_count(self, window: float = 300.0) -> int:
        """Most frequent total active count over the final ``window`` seconds."""
        tr = self.traces
        sel = tr["time"] >= tr["time"][-1] - window if tr["time"].size else slice(None)
        tot = self.active_total()[sel].astype(int)
        if tot.size == 0:
            return 0
        vals, cnt = np.unique(tot, return_counts=True)
        return int(vals[np.argmax(cnt)])

    def steady_efficiency(self, window: float = 300.0) -> float:
        """Mean per-agent efficiency of the active agents over the final window."""
        tr = self.traces
        if tr["time"].size == 0:
            return 0.0
        sel = tr["time"] >= tr["time"][-1] - window
        nl, nr = tr["n_active_L"][sel], tr["n_active_R"][sel]
        num = tr["eta_L"][sel] * nl + tr["eta_R"][sel] * nr
        den = nl + nr
        return float(np.sum(num) / np.sum(den)) if np.sum(den) > 0 else 0.0

    def agent_efficiency(self) -> np.ndarray:
        """(samples, n_total) efficiency trace; 0 for agents that are off."""
        mask = self.traces.get("mask")
        if mask is None:
            raise ValueError("run without per-agent masks (use record_masks=True)")
        half = self.n_total // 2
        eta = np.empty(mask.shape)
        eta[:, :half] = self.traces["eta_L"][:, None]
        eta[:, half:] = self.traces["eta_R"][:, None]
        return eta * mask


TRACE_COLUMNS = ("time", "v_x", "omega", "ref_v", "n_active_L", "n_active_R", "V_L", "V_R",
                 "I_L", "I_R", "tau_L", "tau_R", "eta_L", "eta_R", "V_bus", "energy")


def _agent_view(n: int, active, odo, adist, on_time, current) -> SimState:
    half = n // 2
    agents = [AgentState(i, "L" if i < half else "R", bool(active[i]), float(odo[i]), float(adist[i]),
                         float(on_time[i]), 0, float(current[i])) for i in range(n)]
    return SimState(Pose(), PseudoVelocity(), agents)


def run(sc: Scenario, record_masks: bool = False) -> RunMetrics:
    """Simulate one scenario.  Deterministic: same input, bit-identical output."""
    sc.validate()
    bundle = sc.effective_bundle()
    s = bundle.system
    P = K.pack_params(bundle, literal=sc.literal, battery=sc.battery)
    r, a = s.wheel_radius, s.track_width
    n, half = s.n_total, s.n_group
    gains = PidGains.from_continuous(*sc.gains, sc.dt, bundle.motor.rated_voltage).as_array()

    x = np.zeros(8)
    mem = np.zeros(5)
    acc = np.zeros(K.N_ACC)
    chunk = int(round(sc.trace_dt / sc.dt))
    l2_every = int(round(sc.l2_period / sc.trace_dt))
    n_chunks = int(math.floor(sc.duration / sc.trace_dt + 1e-9))

    active = np.ones(n, bool)
    odo = np.zeros(n)
    adist = np.zeros(n)
    on_time = np.zeros(n)
    on_steps = np.zeros(n, np.int64)
    current = np.zeros(n)
    schedule = Schedule.all_active(half, 0.0, sc.t_on)
    schedule_log = [(0.0, g, schedule.hex(g)) for g in GROUPS]
    started = False
    decision: Optional[AllocationDecision] = None
    infeasible = 0

    cols = {c: np.zeros(n_chunks) for c in TRACE_COLUMNS}
    masks = np.zeros((n_chunks, n), bool) if record_masks else None
    steps_total = 0
    depleted = False
    k_done = 0
    for k in range(n_chunks):
        t = k * sc.trace_dt
        v, w = sc.reference(t)
        refL = (v - 0.5 * a * w) / r
        refR = (v + 0.5 * a * w) / r
        if sc.mode == EC and k % l2_every == 0:
            if not started:
                vt, wt = sc.target(t)
                phiL = (x[5] - 0.5 * a * x[6]) / r
                phiR = (x[5] + 0.5 * a * x[6]) / r
                reached = v == vt and w == wt
                band = sc.settle_band * max(abs(refL), abs(refR), 1e-9)
                started = reached and abs(phiL - refL) < band and abs(phiR - refR) < band
                if reached and not started:
                    # a load the full fleet cannot carry never settles; report it instead of waiting
                    vmax = K.supply_voltage(x, P)
                    need = K.required_voltages(P, float(half), float(half), refL, refR, 1.0 - sc.shortfall_tol)
                    if np.abs(need).max() > vmax:
                        if sc.on_infeasible == "raise":
                            raise InfeasibleLoad(f"reference not sustainable with all {n} agents")
                        infeasible += 1
            if started:
                prob = build_problem(x, mem, P, bundle, refL, refR, gains=sc.gains, dt_control=sc.dt,
                                     horizon=sc.horizon, horizon_dt=sc.horizon_dt,
                                     rollout_dt=sc.rollout_dt, tol=sc.shortfall_tol)
                try:
                    if sc.method == "sqp":
                        decision = allocate_sqp(prob, decision.n_active if decision else None)
                    else:
                        decision = allocate_enumerate(prob)
                except InfeasibleLoad:
                    if sc.on_infeasible == "raise":
                        raise
                    infeasible += 1
                    decision = AllocationDecision((half, half), 0.0, sc.horizon, False, sc.method)
                view = _agent_view(n, active, odo, adist, on_time, current)
                D = {}
                dist = acc[K.A_DIST]
                for g in GROUPS:
                    sl = slice(0, half) if g == "L" else slice(half, n)
                    D[g] = adist[sl] / dist if dist > 0 else np.zeros(half)
                new = schedule_tick(view, decision, schedule, t, sc.t_on, sc.thermal_limit,
                                    sc.thermal_current, D)
                if new is not schedule:
                    for g in GROUPS:
                        if not np.array_equal(new.masks[g], schedule.masks[g]):
                            schedule_log.append((round(t, 9), g, new.hex(g)))
                    schedule = new
                    active = np.concatenate([schedule.masks["L"], schedule.masks["R"]])
        nl = float(np.count_nonzero(active[:half]))
        nr = float(np.count_nonzero(active[half:]))
        dl0, dr0 = acc[K.A_DIST_L], acc[K.A_DIST_R]
        taken = K.advance(x, mem, P, gains, refL, refR, nl, nr, chunk, sc.dt, acc)
        if taken < 0:
            raise NumericalDivergence(f"non-finite state at t={t + (-taken - 1) * sc.dt:.6g}s")
        dL = acc[K.A_DIST_L] - dl0
        dR = acc[K.A_DIST_R] - dr0
        dd = np.concatenate([np.full(half, dL), np.full(half, dR)])
        odo += dd
        adist += dd * active
        on_time = np.where(active, on_time + taken * sc.dt, 0.0)
        on_steps += taken * active
        current = np.where(active, np.concatenate([np.full(half, acc[K.A_IA_L]),
                                                   np.full(half, acc[K.A_IA_R])]), 0.0)
        steps_total += taken
        cols["time"][k] = t + taken * sc.dt
        cols["v_x"][k] = x[5]
        cols["omega"][k] = x[6]
        cols["ref_v"][k] = v
        cols["n_active_L"][k] = nl
        cols["n_active_R"][k] = nr
        cols["V_L"][k] = acc[K.A_V_L]
        cols["V_R"][k] = acc[K.A_V_R]
        cols["I_L"][k] = acc[K.A_IA_L]
        cols["I_R"][k] = acc[K.A_IA_R]
        cols["tau_L"][k] = acc[K.A_TAU_L]
        cols["tau_R"][k] = acc[K.A_TAU_R]
        cols["eta_L"][k] = acc[K.A_ETA_L] if nl > 0 else 0.0
        cols["eta_R"][k] = acc[K.A_ETA_R] if nr > 0 else 0.0
        cols["V_bus"][k] = K.supply_voltage(x, P)
        cols["energy"][k] = acc[K.A_ENERGY]
        if masks is not None:
            masks[k] = active
        k_done = k + 1
        if taken < chunk:
            depleted = True
            break
    traces = {c: v[:k_done] for c, v in cols.items()}
    if masks is not None:
        traces["mask"] = masks[:k_done]
    return RunMetrics(
        energy=float(acc[K.A_ENERGY]),
        distance=float(acc[K.A_DIST]),
        duration=steps_total * sc.dt,
        steps=steps_total,
        depleted=depleted,
        charge_mAh=float(acc[K.A_CHARGE]),
        energy_vdq=float(acc[K.A_VDQ]),
        n_total=n,
        t_on=sc.t_on,
        dt=sc.dt,
        on_steps=on_steps,
        active_distance=adist,
        odometer=odo,
        traces=traces,
        schedule_log=schedule_log,
        infeasible_events=infeasible,
    )


# --- sweeps ------------------------------------------------------------------


def _run_many(scenarios: Sequence[Scenario], workers: Optional[int]) -> list:
    if workers and workers > 1 and len(scenarios) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_run_safe, scenarios))
    return [_run_safe(sc) for sc in scenarios]


def _run_safe(sc: Scenario):
    try:
        return run(sc)
    except InfeasibleLoad as exc:
        return exc


def saving_pct(no: RunMetrics, ec: RunMetrics) -> float:
    return 100.0 * (no.energy - ec.energy) / no.energy if no.energy > 0 else 0.0


@dataclass
class WeightRow:
    gross_kg: float
    no: Optional[RunMetrics]
    ec: Optional[RunMetrics]
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def saving(self) -> float:
        return saving_pct(self.no, self.ec) if self.ok else math.nan

    @property
    def active_agents(self) -> int:
        return self.ec.steady_count() if self.ok else -1


def sweep_weights(base: Scenario, weights: Sequence[float] = TABLE2_WEIGHTS,
                  workers: Optional[int] = None) -> list[WeightRow]:
    """One NO + EC pair per gross weight; an infeasible row is recorded, not raised."""
    if not weights:
        raise ValueError("weights must be non-empty")
    scs = []
    for m in weights:
        sc = base.with_gross_mass(m)
        scs += [replace(sc, mode=NO), replace(sc, mode=EC)]
    res = _run_many(scs, workers)
    rows = []
    for i, m in enumerate(weights):
        no, ec = res[2 * i], res[2 * i + 1]
        err = next((str(e) for e in (no, ec) if isinstance(e, Exception)), None)
        rows.append(WeightRow(m, None if err else no, None if err else ec, err))
    return rows


@dataclass
class AgentSweep:
    counts: list
    weights: list
    advantage: np.ndarray  # (len(counts), len(weights)) percent
    slopes: np.ndarray  # percent per kg, least-squares over weights


def sweep_agents(base: Scenario, counts: Sequence[int] = (16, 32, 64),
                 weights: Sequence[float] = TABLE2_WEIGHTS, workers: Optional[int] = None) -> AgentSweep:
    for c in counts:
        if c < 4 or c % 2:
            raise ValueError("agent counts must be even and >= 4")
    adv = np.full((len(counts), len(weights)), np.nan)
    for i, c in enumerate(counts):
        rows = sweep_weights(base.with_agents(c), weights, workers)
        adv[i] = [row.saving for row in rows]
    w = np.asarray(weights, float)
    slopes = np.array([np.polyfit(w, a, 1)[0] if len(w) > 1 and np.all(np.isfinite(a)) else np.nan
                       for a in adv])
    return AgentSweep(list(counts), list(weights), adv, slopes)


@dataclass
class Endurance:
    t_no: float
    t_ec: float
    no: RunMetrics
    ec: RunMetrics

    @property
    def gain(self) -> float:
        return self.t_ec - self.t_no


def bus_scaled(sc: Scenario, bus_voltage: float) -> Scenario:
    """Scale the speed reference by ``bus_voltage / rated`` (same fraction of no-load speed)."""
    k = min(1.0, bus_voltage / sc.bundle.motor.rated_voltage)
    segs = tuple((d, sv * k, sw * k) for d, sv, sw in sc.segments) if sc.segments else None
    return replace(sc, v_ref=sc.v_ref * k, omega_ref=sc.omega_ref * k, segments=segs, ramp=sc.ramp * k)


def battery_endurance(base: Scenario, capacity: float = 6395.0, duration_cap: float = 4 * 3600.0,
                      workers: Optional[int] = None, scale_reference: bool = True) -> Endurance:
    """Run both modes on battery until depletion (or the cap).

    With ``scale_reference`` the speed reference is scaled to the fresh
    battery's voltage, as for any bus below the motor rating.  An infinite
    ``capacity`` means an ideal source (no battery model).
    """
    b = base.bundle
    if math.isinf(capacity):
        # an ideal source: never depletes, bus at the motor rating
        sc = replace(base, battery=False, duration=duration_cap)
    else:
        bundle = replace(b, battery=replace(b.battery, capacity=capacity))
        sc = replace(base, bundle=bundle, battery=True, duration=duration_cap)
    if scale_reference and sc.battery:
        bt = bundle.battery
        sc = bus_scaled(sc, bt.h + bt.y)
    no, ec = _run_many([replace(sc, mode=NO), replace(sc, mode=EC)], workers)
    for m in (no, ec):
        if isinstance(m, Exception):
            raise m
    return Endurance(no.duration, ec.duration, no, ec)


def idle_time_study(base: Scenario, counts: Sequence[int] = (16, 32, 64),
                    workers: Optional[int] = None) -> list[tuple]:
    """(N, mean idle windows per agent, EC metrics) for each agent count."""
    scs = [replace(base.with_agents(c), mode=EC) for c in counts]
    res = _run_many(scs, workers)
    out = []
    for c, m in zip(counts, res):
        if isinstance(m, Exception):
            raise m
        out.append((c, float(np.mean(m.idle_windows)), m))
    return out


def voltage_study(base: Scenario, voltages: Sequence[float] = (12.0, 18.0, 24.0),
                  workers: Optional[int] = None) -> list[tuple]:
    """EC runs at reduced bus voltage; the speed reference scales with V/rated."""
    scs = [replace(bus_scaled(base, V), mode=EC, supply_voltage=V) for V in voltages]
    res = _run_many(scs, workers)
    for m in res:
        if isinstance(m, Exception):
            raise m
    return list(zip(voltages, res))
