"""Fast invariant suite behind ``overdrive check``."""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import _kernel as K
from .controllers import PidGains, allocate_enumerate, allocate_sqp, build_problem, ilp_objective, \
    select_active_set
from .core import ParameterError, Pose, PseudoVelocity, validate
from .harness import TABLE2_WEIGHTS, Scenario, run
from .kinematics import pose_rate
from .powertrain import peak_efficiency


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: str
    seconds: float = 0.0


def check_parameters(sc: Scenario):
    try:
        validate(sc.bundle)
    except ParameterError as exc:
        return False, f"invalid parameter: {exc.name}"
    return True, "all invariants hold"


def check_nonholonomic(sc: Scenario, n: int = 2000, seed: int = 1):
    rng = np.random.default_rng(seed)
    worst = 0.0
    p = sc.bundle.system
    for _ in range(n):
        q = Pose(*rng.uniform(-100, 100, 2), rng.uniform(-50, 50), *rng.uniform(-1e3, 1e3, 2))
        nu = PseudoVelocity(*rng.uniform(-30, 30, 2))
        qd = pose_rate(q, nu, p)
        worst = max(worst, abs(-qd[0] * math.sin(q.theta) + qd[1] * math.cos(q.theta)))
    return worst < 1e-12, f"max residual {worst:.3g}"


def _kinetic(x, P):
    r, a, n = P[K.P_R], P[K.P_A], P[K.P_N]
    phiL = (x[5] - 0.5 * a * x[6]) / r
    phiR = (x[5] + 0.5 * a * x[6]) / r
    return 0.5 * (P[K.P_M] * x[5] ** 2 + P[K.P_IZZ] * x[6] ** 2 + 0.5 * n * P[K.P_IW] * (phiL**2 + phiR**2))


def check_dissipativity(sc: Scenario, n_states: int = 200, n_steps: int = 200, seed: int = 2):
    rng = np.random.default_rng(seed)
    P = K.pack_params(sc.bundle, literal=sc.literal)
    acc = np.zeros(K.N_ACC)
    half = sc.bundle.system.n_group
    worst = -math.inf
    for _ in range(n_states):
        x = np.zeros(8)
        x[2] = rng.uniform(-3, 3)
        x[5], x[6] = rng.uniform(-25, 25), rng.uniform(-20, 20)
        nl, nr = rng.integers(0, half + 1, 2)
        e = _kinetic(x, P)
        for _ in range(n_steps):
            K.step(x, 0.0, 0.0, float(nl), float(nr), sc.dt, P, acc)
            e2 = _kinetic(x, P)
            worst = max(worst, e2 - e)
            e = e2
    return worst <= 1e-12, f"max kinetic-energy increase {worst:.3g} J"


def check_symmetry(sc: Scenario, seconds: float = 20.0):
    P = K.pack_params(sc.bundle, literal=sc.literal)
    g = PidGains.from_continuous(*sc.gains, sc.dt, sc.bundle.motor.rated_voltage).as_array()
    x = np.zeros(8)
    mem = np.zeros(5)
    acc = np.zeros(K.N_ACC)
    half = float(sc.bundle.system.n_group)
    ref = sc.v_ref / sc.bundle.system.wheel_radius
    worst = 0.0
    for _ in range(int(seconds / 0.1)):
        K.advance(x, mem, P, g, ref, ref, half, half, int(round(0.1 / sc.dt)), sc.dt, acc)
        worst = max(worst, abs(x[6]))
    return worst == 0.0, f"max |omega| {worst:.3g} rad/s"


def check_ilp(max_group: int = 8, trials: int = 50, seed: int = 3):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in range(1, max_group + 1):
        for k in range(n + 1):
            for _ in range(trials):
                D = rng.random(n)
                if rng.random() < 0.3:
                    D = np.round(D, 1)  # exercise ties
                greedy = ilp_objective(D, select_active_set(D, k).masks["L"])
                best = min((ilp_objective(D, np.isin(np.arange(n), c))
                            for c in itertools.combinations(range(n), k)), default=0.0)
                worst = max(worst, abs(greedy - best))
    return worst == 0.0, f"max objective gap {worst:.3g}"


def check_motor_peak(sc: Scenario):
    m = sc.bundle.motor
    eta, tau = peak_efficiency(m)
    frac = tau / m.stall_torque
    ok = abs(eta - 0.77) <= 0.03 and 0.10 <= frac <= 0.20
    return ok, f"peak eta {eta:.4f} at {100 * frac:.1f}% of stall"


def steady_snapshot(sc: Scenario, seconds: float = 60.0):
    """Closed loop with every agent on, ramped to the reference, for ``seconds``."""
    b = sc.bundle
    P = K.pack_params(b, literal=sc.literal)
    g = PidGains.from_continuous(*sc.gains, sc.dt, b.motor.rated_voltage).as_array()
    x = np.zeros(8)
    mem = np.zeros(5)
    acc = np.zeros(K.N_ACC)
    half = float(b.system.n_group)
    r = b.system.wheel_radius
    chunk = int(round(0.1 / sc.dt))
    for k in range(int(seconds / 0.1)):
        v, _ = sc.reference(k * 0.1)
        K.advance(x, mem, P, g, v / r, v / r, half, half, chunk, sc.dt, acc)
    return x, mem, P


def allocation_pair(sc: Scenario):
    x, mem, P = steady_snapshot(sc)
    ref = sc.v_ref / sc.bundle.system.wheel_radius
    prob = build_problem(x, mem, P, sc.bundle, ref, ref, gains=sc.gains, dt_control=sc.dt,
                         horizon=sc.horizon, horizon_dt=sc.horizon_dt, rollout_dt=sc.rollout_dt,
                         tol=sc.shortfall_tol)
    return allocate_enumerate(prob), allocate_sqp(prob)


def check_enum_vs_sqp(sc: Scenario, weights=TABLE2_WEIGHTS):
    pairs = []
    for w in weights:
        e, s = allocation_pair(sc.with_gross_mass(w))
        pairs.append((w, e.total, s.total))
    ok = all(a == b for _, a, b in pairs)
    return ok, ", ".join(f"{w:g}kg:{a}/{b}" for w, a, b in pairs)


def check_determinism(sc: Scenario, seconds: float = 120.0):
    s = replace(sc, duration=seconds, mode="energy_conscious")
    a, b = run(s), run(s)
    same = (a.energy == b.energy and a.distance == b.distance
            and all(np.array_equal(a.traces[k], b.traces[k]) for k in a.traces)
            and a.schedule_log == b.schedule_log)
    return same, f"energy {a.energy!r} vs {b.energy!r}"


def run_checks(sc: Scenario | None = None) -> list[CheckResult]:
    sc = sc or Scenario().with_gross_mass(13.2)
    out = []
    ok, val = check_parameters(sc)
    out.append(CheckResult("parameters", ok, val))
    suite = [
        ("nonholonomic constraint", check_nonholonomic),
        ("dissipativity (zero voltage)", check_dissipativity),
        ("straight-line symmetry", check_symmetry),
        ("wear-levelling ILP exactness", lambda s: check_ilp()),
        ("motor peak efficiency", check_motor_peak),
        ("enumerate vs SQP counts", check_enum_vs_sqp),
        ("determinism", check_determinism),
    ]
    for name, fn in suite:
        if not out[0].passed:
            out.append(CheckResult(name, False, "skipped: parameters invalid"))
            continue
        t = time.perf_counter()
        try:
            passed, val = fn(sc)
        except Exception as exc:  # a broken model is a failed property, not a crash
            passed, val = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(passed), val, time.perf_counter() - t))
    return out
