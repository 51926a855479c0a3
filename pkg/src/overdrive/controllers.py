"""The three-level decision stack.

Level 1 is a per-group PID on wheel speed, Level 2 picks how many agents each
group powers (maximising motor efficiency over a short closed-loop rollout),
and Level 3 picks *which* agents are powered so that wear stays level.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from . import _kernel as K
from .core import ParamBundle, SimState
from .dynamics import GroupTorques, params_vector, state_vector
from .powertrain import peak_efficiency

GROUPS = ("L", "R")


class InfeasibleLoad(RuntimeError):
    """Even with every agent powered the reference cannot be held."""


class BadCount(ValueError):
    pass


# --- Level 1 ---------------------------------------------------------------


@dataclass(frozen=True)
class PidGains:
    """Discrete PID gains, already scaled for the control step.

    ``kp`` in V*s/rad; ``ki`` and ``kd`` are per-step gains.  ``e_max``
    bounds the error integral (anti-windup); ``None`` means unbounded.
    """

    kp: float
    ki: float
    kd: float = 0.0
    e_max: Optional[float] = None

    @classmethod
    def from_continuous(cls, kp: float, ki: float, kd: float, dt: float,
                        v_rated: float = 24.0) -> "PidGains":
        """Convert continuous-time gains (V*s/rad, V/rad, V*s^2/rad) to step gains."""
        if not dt > 0:
            raise ValueError("dt must be positive")
        ki_step = ki * dt
        return cls(kp, ki_step, kd / dt, v_rated / ki_step if ki_step > 0 else None)

    def as_array(self) -> np.ndarray:
        emax = self.e_max if self.e_max is not None else np.inf
        return np.array([self.kp, self.ki, self.kd, emax])


DEFAULT_GAINS = (2.0, 0.5, 0.0)  # continuous kp, ki, kd


@dataclass(frozen=True)
class PidMemory:
    integral: float = 0.0
    prev_error: float = 0.0
    primed: bool = False


def pid_voltage(phidot_meas: float, phidot_ref: float, gains: PidGains, memory: PidMemory,
                v_max: float = 24.0) -> tuple[float, PidMemory]:
    """One PID update for one group.

    The error is measured minus reference; the command is the negated PID sum
    so that a speed deficit yields a positive voltage.  On the first call the
    derivative term sees no jump.
    """
    e = phidot_meas - phidot_ref
    prev = memory.prev_error if memory.primed else e
    E = memory.integral + e
    if gains.e_max is not None:
        E = min(max(E, -gains.e_max), gains.e_max)
    V = -(gains.kp * e + gains.ki * E + gains.kd * (e - prev))
    V = min(max(V, -v_max), v_max)
    return V, PidMemory(E, e, True)


# --- Level 2 ---------------------------------------------------------------


@dataclass(frozen=True)
class AllocationDecision:
    n_active: tuple  # (N_aL, N_aR)
    predicted_efficiency: float  # mean per-group efficiency over the horizon
    horizon: int
    symmetric: bool = False  # the mirrored split scores identically
    method: str = "enumerate"

    @property
    def total(self) -> int:
        return int(sum(self.n_active))


@dataclass(frozen=True)
class AllocationProblem:
    """Everything Level 2 needs, in kernel form.

    ``mem`` is the PID memory already rescaled to the rollout step.
    """

    x: np.ndarray
    mem: np.ndarray
    P: np.ndarray
    gains: np.ndarray
    ref_L: float
    ref_R: float
    n_group: int
    v_max: float
    horizon: int = 10
    sample_steps: int = 10
    dt: float = 0.01
    tol: float = 0.0

    def feasible(self, nl: float, nr: float) -> bool:
        V = K.required_voltages(self.P, nl, nr, self.ref_L, self.ref_R, 1.0 - self.tol)
        return bool(np.abs(V).max() <= self.v_max)

    def slack(self, nl: float, nr: float) -> np.ndarray:
        """Per-group voltage headroom; feasible iff both entries are >= 0.

        A braking group (negative required voltage) is limited by the same rail.
        """
        V = K.required_voltages(self.P, nl, nr, self.ref_L, self.ref_R, 1.0 - self.tol)
        return self.v_max - np.abs(V)

    def objective(self, nl: float, nr: float) -> float:
        return K.rollout_objective(self.x, self.mem, self.P, self.gains, self.ref_L, self.ref_R,
                                   float(nl), float(nr), self.horizon, self.sample_steps, self.dt)

    @property
    def straight(self) -> bool:
        return self.ref_L == self.ref_R

    @property
    def braking(self) -> tuple:
        """Per group: must it brake (draw negative current) to hold the reference?

        A braking group has zero efficiency whatever its count, so removing
        agents saves nothing and only costs braking authority; it keeps all.
        """
        half = float(self.n_group)
        V = K.required_voltages(self.P, half, half, self.ref_L, self.ref_R, 1.0 - self.tol)
        ke = self.P[K.P_KE]
        return bool(V[0] < ke * self.ref_L), bool(V[1] < ke * self.ref_R)


def _candidates(prob: AllocationProblem):
    half = prob.n_group
    if prob.straight:
        seen = set()
        for t in range(1, 2 * half + 1):
            for c in (((t + 1) // 2, t // 2), (t // 2, (t + 1) // 2)):
                if c[0] <= half and c[1] <= half and c not in seen:
                    seen.add(c)
                    yield c
    else:
        bl, br = prob.braking
        for nl in (half,) if bl else range(half + 1):
            for nr in (half,) if br else range(half + 1):
                if nl + nr > 0:
                    yield nl, nr


def _decision(prob: AllocationProblem, best, scores: dict, method: str) -> AllocationDecision:
    obj, nl, nr = best
    nl, nr = int(nl), int(nr)
    mirror = scores.get((nr, nl))
    symmetric = bool(nl != nr and mirror is not None and abs(mirror - obj) <= 1e-9 * max(1.0, abs(obj)))
    n_terms = (prob.horizon + 1) * (int(nl > 0) + int(nr > 0))
    eta = obj / n_terms if n_terms else 0.0
    return AllocationDecision((nl, nr), min(max(eta, 0.0), 1.0), prob.horizon, symmetric, method)


def allocate_enumerate(prob: AllocationProblem) -> AllocationDecision:
    """Exhaustive argmax over integer counts (ties keep the first, smallest total)."""
    best = None
    scores = {}
    for nl, nr in _candidates(prob):
        if not prob.feasible(nl, nr):
            continue
        obj = prob.objective(nl, nr)
        scores[(nl, nr)] = obj
        if best is None or obj > best[0] + 1e-12:
            best = (obj, nl, nr)
    if best is None:
        raise InfeasibleLoad(f"reference not sustainable with all {2 * prob.n_group} agents")
    return _decision(prob, best, scores, "enumerate")


def allocate_sqp(prob: AllocationProblem, warm: Optional[tuple] = None) -> AllocationDecision:
    """SQP over relaxed (real) counts, then the best feasible integer neighbour."""
    half = prob.n_group
    if not prob.feasible(half, half):
        raise InfeasibleLoad(f"reference not sustainable with all {2 * half} agents")
    braking = (False, False) if prob.straight else prob.braking
    bounds = [(float(half), float(half)) if b else (1.0, float(half)) for b in braking]
    x0 = np.asarray(warm if warm is not None else (half, half), float)
    x0 = np.array([min(max(v, lo), hi) for v, (lo, hi) in zip(x0, bounds)])
    scale = 1.0 / (2 * (prob.horizon + 1))
    res = minimize(lambda z: -scale * prob.objective(z[0], z[1]), x0, method="SLSQP",
                   bounds=bounds,
                   constraints=[{"type": "ineq", "fun": lambda z: prob.slack(z[0], z[1])}],
                   options={"eps": 1e-3, "ftol": 1e-9, "maxiter": 100})
    z = np.array([min(max(v, lo), hi) for v, (lo, hi) in zip(res.x, bounds)])
    scores = {}
    best = None
    # integer neighbours of the relaxed optimum; grow upward until one is feasible
    lo = [int(v) for v in np.floor(z + 1e-9)]
    for grow in range(0, half + 1):
        for nl in {min(lo[0] + grow, half), min(lo[0] + grow + 1, half)}:
            for nr in {min(lo[1] + grow, half), min(lo[1] + grow + 1, half)}:
                if (nl, nr) in scores or (prob.straight and abs(nl - nr) > 1):
                    continue
                if (braking[0] and nl != half) or (braking[1] and nr != half):
                    continue
                if not prob.feasible(nl, nr):
                    continue
                obj = prob.objective(nl, nr)
                scores[(nl, nr)] = obj
                if best is None or obj > best[0] + 1e-12 or (
                        abs(obj - best[0]) <= 1e-12 and nl + nr < best[1] + best[2]):
                    best = (obj, nl, nr)
        if best is not None:
            break
    if best is None:  # unreachable: (half, half) is feasible
        raise InfeasibleLoad("no feasible integer neighbour")
    _, nl, nr = best
    if nl != nr and (nr, nl) not in scores and prob.feasible(nr, nl):
        scores[(nr, nl)] = prob.objective(nr, nl)
    return _decision(prob, best, scores, "sqp")


def warm_start(tau_prev: GroupTorques, bundle: ParamBundle, v: float | None = None) -> tuple:
    """Initial relaxed counts: the previous group torque spread at peak-efficiency torque."""
    _, tau_pk = peak_efficiency(bundle.motor, v, n=2001)
    half = bundle.system.n_group
    out = []
    for tau in (tau_prev.tau_L, tau_prev.tau_R):
        out.append(min(max(abs(tau) / tau_pk, 1.0), half))
    return tuple(out)


def build_problem(x: np.ndarray, mem: np.ndarray, P: np.ndarray, bundle: ParamBundle,
                  ref_L: float, ref_R: float, *, gains=DEFAULT_GAINS, dt_control: float = 1e-3,
                  horizon: int = 10, horizon_dt: float = 0.1, rollout_dt: float = 0.01,
                  tol: float = 0.0) -> AllocationProblem:
    """Package a run-loop snapshot for Level 2.

    The rollout integrates at ``rollout_dt``; the PID integral is rescaled so
    the held voltage is continuous across the change of step.
    """
    vmax = K.supply_voltage(x, P)
    g = PidGains.from_continuous(*gains, rollout_dt, bundle.motor.rated_voltage)
    m = mem.copy()
    m[0] *= dt_control / rollout_dt
    m[2] *= dt_control / rollout_dt
    sample = max(1, int(round(horizon_dt / rollout_dt)))
    return AllocationProblem(x.copy(), m, P, g.as_array(), ref_L, ref_R, bundle.system.n_group,
                             vmax, horizon, sample, rollout_dt, tol)


def choose_active_counts(state: SimState, tau_prev: Optional[GroupTorques], bundle: ParamBundle,
                         H: int = 10, method: str = "enumerate", *, ref: tuple,
                         previous: Optional[AllocationDecision] = None, dt_control: float = 1e-3,
                         literal: bool = False, battery: bool = False, tol: float = 0.0,
                         gains=DEFAULT_GAINS) -> AllocationDecision:
    """Level-2 decision from a typed state snapshot.

    ``ref`` is the (left, right) wheel-speed reference in rad/s.  The SQP
    warm start is the previous decision if given, else derived from
    ``tau_prev``.
    """
    P = params_vector(bundle, literal=literal, battery=battery)
    x = state_vector(state)
    mem = np.concatenate([state.pid_memory[:4], [1.0]])
    prob = build_problem(x, mem, P, bundle, ref[0], ref[1], gains=gains, dt_control=dt_control,
                         horizon=H, tol=tol)
    if method == "enumerate":
        return allocate_enumerate(prob)
    if method == "sqp":
        if previous is not None:
            warm = previous.n_active
        elif tau_prev is not None:
            warm = warm_start(tau_prev, bundle)
        else:
            warm = None
        return allocate_sqp(prob, warm)
    raise ValueError(f"unknown method {method!r}")


# --- Level 3 ---------------------------------------------------------------

T_ON = 100.0
THERMAL_LIMIT_S = 600.0
THERMAL_CURRENT_A = 1.0


@dataclass(frozen=True)
class Schedule:
    """Active masks per group (indexed by position within the group)."""

    masks: dict
    valid_from: float = 0.0
    valid_until: float = T_ON
    extra: Optional[str] = None  # group holding the odd agent this window

    def count(self, g: str) -> int:
        return int(np.count_nonzero(self.masks[g]))

    @property
    def counts(self) -> tuple:
        return tuple(self.count(g) for g in GROUPS if g in self.masks)

    def hex(self, g: str) -> str:
        bits = 0
        for j, on in enumerate(self.masks[g]):
            bits |= int(bool(on)) << j
        return f"{bits:0{max(1, (len(self.masks[g]) + 3) // 4)}x}"

    @classmethod
    def all_active(cls, n_group: int, now: float = 0.0, t_on: float = T_ON) -> "Schedule":
        return cls({g: np.ones(n_group, bool) for g in GROUPS}, now, now + t_on)


def select_active_set(D, n_active: int, group: str = "L", *, exclude=None, now: float = 0.0,
                      t_on: float = T_ON) -> Schedule:
    """Exact solution of the wear-levelling integer program for one group.

    Minimises sum_j (D_j - 1/N) x_j subject to sum x = n_active, x binary:
    take the n_active smallest weights, ties to the lowest index.  Agents in
    ``exclude`` are only used if there are not enough others.
    """
    D = np.asarray(D, float)
    n = D.size
    if n_active < 0 or n_active > n:
        raise BadCount(f"n_active={n_active} for a group of {n}")
    w = D - 1.0 / n
    order = np.argsort(w, kind="stable")
    if exclude is not None and len(exclude):
        ex = np.zeros(n, bool)
        ex[list(exclude)] = True
        order = np.concatenate([order[~ex[order]], order[ex[order]]])
    mask = np.zeros(n, bool)
    mask[order[:n_active]] = True
    return Schedule({group: mask}, now, now + t_on)


def ilp_objective(D, mask) -> float:
    """sum_j (D_j - 1/N) x_j, correctly rounded so equal selections compare equal."""
    D = np.asarray(D, float)
    return math.fsum((D - 1.0 / D.size)[np.asarray(mask, bool)])


def _split(decision: AllocationDecision, current: Schedule, window_change: bool) -> tuple:
    nl, nr = decision.n_active
    if not decision.symmetric or nl == nr:
        return (nl, nr), None
    big, small = max(nl, nr), min(nl, nr)
    if window_change and current.extra is not None:
        extra = "R" if current.extra == "L" else "L"
    elif current.extra is not None:
        extra = current.extra
    else:
        extra = "L" if nl > nr else "R"
    return ((big, small) if extra == "L" else (small, big)), extra


def normalized_distances(state: SimState, g: str) -> np.ndarray:
    """Powered distance of each agent of group ``g`` over the vehicle's distance."""
    agents = state.group(g)
    d = np.array([ag.active_distance for ag in agents])
    total = max(ag.distance for ag in agents) if agents else 0.0
    return d / total if total > 0 else np.zeros(len(agents))


def schedule_tick(state: SimState, decision: AllocationDecision, current: Schedule, now: float,
                  t_on: float = T_ON, thermal_limit: float = THERMAL_LIMIT_S,
                  thermal_current: float = THERMAL_CURRENT_A,
                  D: Optional[dict] = None) -> Schedule:
    """Reselect masks when the window expires or the requested counts change.

    A symmetric odd split alternates its extra agent between groups each
    window.  Agents that would exceed the continuous-on limit during the next
    window while drawing at least ``thermal_current`` are excluded if possible.
    """
    window_change = now - current.valid_from >= t_on - 1e-9
    if decision.symmetric:
        count_change = sum(decision.n_active) != sum(current.counts)
    else:
        count_change = tuple(decision.n_active) != current.counts
    if not (window_change or count_change):
        return current
    counts, extra = _split(decision, current, window_change)
    masks = {}
    for g, n in zip(GROUPS, counts):
        agents = state.group(g)
        Dg = D[g] if D is not None else normalized_distances(state, g)
        hot = [j for j, ag in enumerate(agents)
               if ag.active and ag.continuous_on_time + t_on > thermal_limit
               and abs(ag.current) >= thermal_current]
        masks[g] = select_active_set(Dg, n, g, exclude=hot).masks[g]
    return Schedule(masks, now, now + t_on, extra)


def apply_schedule(state: SimState, schedule: Schedule) -> None:
    for g in GROUPS:
        for ag, on in zip(state.group(g), schedule.masks[g]):
            ag.active = bool(on)
