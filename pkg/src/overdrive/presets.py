"""Named experiments that regenerate each published table/figure as CSV + PNG."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__, plotting
from .config import to_dict
from .core import UnknownPreset
from .harness import (EC, NO, TABLE2_WEIGHTS, TRACE_COLUMNS, Scenario, battery_endurance, idle_time_study,
                      run, sweep_agents, sweep_weights, voltage_study)
from .powertrain import characteristic_surface

TEN_KG_PAYLOAD_GROSS = 13.2
THIRTY_KG_PAYLOAD_GROSS = 33.2

HEADERS = {
    "table2": ["gross_kg", "energy_no_kJ", "energy_ec_kJ", "saving_pct", "active_agents", "mileage_no",
               "mileage_ec"],
    "fig4a": ["gross_kg", "time_s", "efficiency", "n_active"],
    "fig4b": ["supply_V", "time_s", "efficiency", "n_active"],
    "fig6": ["n_agents", "gross_kg", "advantage_pct"],
    "fig6_slopes": ["n_agents", "slope_pct_per_kg"],
    "fig7": ["mode", "time_s", "efficiency", "n_active", "V_bus"],
    "fig7_summary": ["mode", "lifetime_s"],
    "fig8": ["time_s", "step", "group", "mask_hex"],
    "fig9": ["n_agents", "avg_idle_steps"],
    "motor_surface": ["V", "tau_mNm", "speed_rpm", "eta"],
    "metrics": ["mode", "gross_kg", "n_total", "duration_s", "energy_kJ", "distance_m", "mileage_m_per_J",
                "mileage_defined", "steady_active", "steady_efficiency", "depleted", "infeasible_events"],
    "trace": list(TRACE_COLUMNS),
    "schedule": ["time_s", "group", "mask_hex"],
    "agents": ["agent_id", "group", "odometer_m", "active_distance_m", "on_steps", "idle_steps"],
}


def provenance(name: str, sc: Scenario, extra: dict | None = None) -> str:
    info = {"preset": name, "version": __version__, "params": to_dict(sc)}
    if extra:
        info.update(extra)
    return "overdrive " + json.dumps(info, separators=(",", ":"), sort_keys=True)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    return str(v)


def write_csv(path: Path, header: list, rows, comment: str | None = None) -> Path:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[list, list]:
    """(header, rows) skipping provenance comment lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def _mean_eta(tr):
    n = tr["n_active_L"] + tr["n_active_R"]
    num = tr["eta_L"] * tr["n_active_L"] + tr["eta_R"] * tr["n_active_R"]
    return np.where(n > 0, num / np.maximum(n, 1), 0.0), n


def _decimate(tr, every: int = 10):
    return {k: v[every - 1::every] for k, v in tr.items() if v.ndim == 1}


def metrics_row(sc: Scenario, m) -> list:
    return [sc.mode, sc.bundle.system.mass, m.n_total, m.duration, m.energy / 1e3, m.distance, m.mileage,
            m.mileage_defined, m.steady_count(), m.steady_efficiency(), m.depleted, m.infeasible_events]


def write_run(sc: Scenario, m, out: Path, stem: str = "", comment: str | None = None) -> list:
    """metrics, trace, schedule and per-agent CSVs plus a trace PNG for one run."""
    p = f"{stem}_" if stem else ""
    files = [write_csv(out / f"{p}metrics.csv", HEADERS["metrics"], [metrics_row(sc, m)], comment)]
    tr = m.traces
    files.append(write_csv(out / f"{p}trace.csv", HEADERS["trace"],
                           zip(*(tr[c] for c in TRACE_COLUMNS)), comment))
    files.append(write_csv(out / f"{p}schedule.csv", HEADERS["schedule"], m.schedule_log, comment))
    half = m.n_total // 2
    files.append(write_csv(out / f"{p}agents.csv", HEADERS["agents"],
                           [(i, "L" if i < half else "R", m.odometer[i], m.active_distance[i], m.on_steps[i],
                             m.idle_steps[i]) for i in range(m.n_total)], comment))
    png = out / f"{p}trace.png"
    plotting.run_traces(m, png, f"{sc.mode}, {sc.bundle.system.mass:g} kg")
    files.append(png)
    return files


# --- presets -----------------------------------------------------------------


def _table2(base: Scenario, out: Path, workers):
    rows = []
    for r in sweep_weights(base, TABLE2_WEIGHTS, workers):
        if r.ok:
            rows.append({"gross_kg": r.gross_kg, "energy_no_kJ": r.no.energy / 1e3,
                         "energy_ec_kJ": r.ec.energy / 1e3, "saving_pct": r.saving,
                         "active_agents": r.active_agents, "mileage_no": r.no.mileage,
                         "mileage_ec": r.ec.mileage})
        else:
            rows.append({"gross_kg": r.gross_kg, "energy_no_kJ": float("nan"), "energy_ec_kJ": float("nan"),
                         "saving_pct": float("nan"), "active_agents": -1, "mileage_no": float("nan"),
                         "mileage_ec": float("nan")})
    h = HEADERS["table2"]
    f = write_csv(out / "table2.csv", h, [[r[c] for c in h] for r in rows], provenance("table2", base))
    plotting.table2(rows, out / "table2.png")
    return [f, out / "table2.png"]


def _fig4a(base: Scenario, out: Path, workers):
    from .harness import _run_many

    scs = [replace(base.with_gross_mass(w), mode=EC) for w in TABLE2_WEIGHTS]
    res = _run_many(scs, workers)
    rows, series = [], []
    for w, m in zip(TABLE2_WEIGHTS, res):
        if isinstance(m, Exception):
            raise m
        tr = _decimate(m.traces)
        eta, n = _mean_eta(tr)
        rows += [(w, t, e, k) for t, e, k in zip(tr["time"], eta, n)]
        series.append((w, tr["time"], eta, n))
    f = write_csv(out / "fig4a.csv", HEADERS["fig4a"], rows, provenance("fig4a", base))
    plotting.efficiency_family(series, out / "fig4a.png", "{:g} kg")
    return [f, out / "fig4a.png"]


def _fig4b(base: Scenario, out: Path, workers):
    sc = base.with_gross_mass(TEN_KG_PAYLOAD_GROSS)
    rows, series = [], []
    for V, m in voltage_study(sc, workers=workers):
        tr = _decimate(m.traces)
        eta, n = _mean_eta(tr)
        rows += [(V, t, e, k) for t, e, k in zip(tr["time"], eta, n)]
        series.append((V, tr["time"], eta, n))
    f = write_csv(out / "fig4b.csv", HEADERS["fig4b"], rows, provenance("fig4b", sc))
    plotting.efficiency_family(series, out / "fig4b.png", "{:g} V")
    return [f, out / "fig4b.png"]


def _fig6(base: Scenario, out: Path, workers):
    s = sweep_agents(base, (16, 32, 64), TABLE2_WEIGHTS, workers)
    rows = [(c, w, s.advantage[i, j]) for i, c in enumerate(s.counts) for j, w in enumerate(s.weights)]
    prov = provenance("fig6", base)
    f1 = write_csv(out / "fig6.csv", HEADERS["fig6"], rows, prov)
    f2 = write_csv(out / "fig6_slopes.csv", HEADERS["fig6_slopes"], zip(s.counts, s.slopes), prov)
    plotting.advantage(s, out / "fig6.png")
    return [f1, f2, out / "fig6.png"]


def _fig7(base: Scenario, out: Path, workers, duration_cap: float = 4 * 3600.0):
    sc = base.with_gross_mass(THIRTY_KG_PAYLOAD_GROSS)
    e = battery_endurance(sc, duration_cap=duration_cap, workers=workers)
    rows = []
    for name, m in ((NO, e.no), (EC, e.ec)):
        tr = _decimate(m.traces)
        eta, n = _mean_eta(tr)
        rows += [(name, t, x, k, v) for t, x, k, v in zip(tr["time"], eta, n, tr["V_bus"])]
    prov = provenance("fig7", sc, {"capacity_mAh": sc.bundle.battery.capacity})
    f1 = write_csv(out / "fig7.csv", HEADERS["fig7"], rows, prov)
    f2 = write_csv(out / "fig7_summary.csv", HEADERS["fig7_summary"], [(NO, e.t_no), (EC, e.t_ec)], prov)
    plotting.endurance(e, out / "fig7.png")
    return [f1, f2, out / "fig7.png"]


def _fig8(base: Scenario, out: Path, workers):
    sc = replace(base.with_gross_mass(TEN_KG_PAYLOAD_GROSS), mode=EC)
    m = run(sc, record_masks=True)
    rows = [(t, t / sc.t_on, g, h) for t, g, h in m.schedule_log]
    f = write_csv(out / "fig8.csv", HEADERS["fig8"], rows, provenance("fig8", sc))
    plotting.schedule(m, out / "fig8.png", sc.t_on)
    return [f, out / "fig8.png"]


def _fig9(base: Scenario, out: Path, workers):
    sc = base.with_gross_mass(TEN_KG_PAYLOAD_GROSS)
    res = idle_time_study(sc, (16, 32, 64), workers)
    rows = [(c, idle) for c, idle, _ in res]
    f = write_csv(out / "fig9.csv", HEADERS["fig9"], rows, provenance("fig9", sc))
    plotting.idle(rows, out / "fig9.png")
    return [f, out / "fig9.png"]


def _motor_surface(base: Scenario, out: Path, workers):
    m = base.bundle.motor
    v_grid = [m.rated_voltage * k for k in (0.25, 0.5, 0.75, 1.0)]
    tau_grid = list(np.linspace(m.stall_torque / 100, m.stall_torque, 100))
    rows = characteristic_surface(m, v_grid, tau_grid)
    from .core import RPM

    f = write_csv(out / "motor_surface.csv", HEADERS["motor_surface"],
                  [(V, t * 1e3, p / RPM, e) for V, t, p, e in rows], provenance("motor_surface", base))
    plotting.motor_surface(rows, out / "motor_surface.png")
    return [f, out / "motor_surface.png"]


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    stem: str
    description: str
    runner: Callable


PRESETS = {p.name: p for p in [
    ExperimentPreset("table2", "table2", "NO vs EC energy over six gross weights", _table2),
    ExperimentPreset("fig4a", "fig4a", "EC efficiency traces for each gross weight", _fig4a),
    ExperimentPreset("fig4b", "fig4b", "EC efficiency at 12/18/24 V bus, 10 kg payload", _fig4b),
    ExperimentPreset("fig6", "fig6", "energy advantage vs weight for 16/32/64 agents", _fig6),
    ExperimentPreset("fig7", "fig7", "battery endurance, NO vs EC, 30 kg payload", _fig7),
    ExperimentPreset("fig8", "fig8", "wear-levelling schedule transitions (1 step = T_ON)", _fig8),
    ExperimentPreset("fig9", "fig9", "average idle steps per agent vs agent count", _fig9),
    ExperimentPreset("motor_surface", "motor_surface", "motor efficiency and speed vs torque", _motor_surface),
]}


def run_preset(name: str, base: Scenario, out: Path, workers=None, battery_cap: float | None = None) -> list:
    """Run preset ``name`` on top of ``base``; ``battery_cap`` bounds the endurance runs (s)."""
    try:
        p = PRESETS[name]
    except KeyError:
        raise UnknownPreset(name) from None
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if name == "fig7" and battery_cap is not None:
        return _fig7(base, out, workers, battery_cap)
    return p.runner(base, out, workers)
