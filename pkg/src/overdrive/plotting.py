"""PNG figures rendered next to the CSV outputs (headless backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def run_traces(metrics, path, title=""):
    tr = metrics.traces
    fig, ax = plt.subplots(3, 1, figsize=(7, 7), sharex=True)
    ax[0].plot(tr["time"], tr["v_x"], label="v_x")
    ax[0].plot(tr["time"], tr["ref_v"], "--", label="reference")
    ax[0].set_ylabel("m/s")
    ax[0].legend(loc="lower right")
    ax[1].plot(tr["time"], tr["eta_L"], label="left")
    ax[1].plot(tr["time"], tr["eta_R"], label="right")
    ax[1].set_ylabel("efficiency")
    ax[1].legend(loc="lower right")
    ax[2].step(tr["time"], tr["n_active_L"] + tr["n_active_R"], where="post")
    ax[2].set_ylabel("active agents")
    ax[2].set_xlabel("time (s)")
    if title:
        ax[0].set_title(title)
    _save(fig, path)


def table2(rows, path):
    w = [r["gross_kg"] for r in rows]
    fig, ax = plt.subplots(1, 2, figsize=(10, 4))
    x = np.arange(len(w))
    ax[0].bar(x - 0.2, [r["energy_no_kJ"] for r in rows], 0.4, label="NO")
    ax[0].bar(x + 0.2, [r["energy_ec_kJ"] for r in rows], 0.4, label="EC")
    ax[0].set_xticks(x, [f"{v:g}" for v in w])
    ax[0].set_xlabel("gross weight (kg)")
    ax[0].set_ylabel("energy (kJ)")
    ax[0].legend()
    ax[1].plot(w, [r["saving_pct"] for r in rows], "o-")
    ax[1].set_xlabel("gross weight (kg)")
    ax[1].set_ylabel("saving (%)")
    ax2 = ax[1].twinx()
    ax2.plot(w, [r["active_agents"] for r in rows], "s--", color="C1")
    ax2.set_ylabel("active agents", color="C1")
    _save(fig, path)


def efficiency_family(series, path, label_fmt, ylabel="efficiency"):
    """``series``: list of (label_value, time, eta, n_active)."""
    fig, ax = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for val, t, eta, n in series:
        ax[0].plot(t, eta, label=label_fmt.format(val))
        ax[1].step(t, n, where="post", label=label_fmt.format(val))
    ax[0].set_ylabel(ylabel)
    ax[0].legend(fontsize=8)
    ax[1].set_ylabel("active agents")
    ax[1].set_xlabel("time (s)")
    _save(fig, path)


def advantage(sweep, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for c, adv in zip(sweep.counts, sweep.advantage):
        ax.plot(sweep.weights, adv, "o-", label=f"N = {c}")
    ax.set_xlabel("gross weight (kg)")
    ax.set_ylabel("energy advantage (%)")
    ax.legend()
    _save(fig, path)


def endurance(result, path):
    fig, ax = plt.subplots(3, 1, figsize=(7, 7), sharex=True)
    for name, m in (("NO", result.no), ("EC", result.ec)):
        tr = m.traces
        n = tr["n_active_L"] + tr["n_active_R"]
        eta = np.where(n > 0, (tr["eta_L"] * tr["n_active_L"] + tr["eta_R"] * tr["n_active_R"])
                       / np.maximum(n, 1), 0.0)
        ax[0].plot(tr["time"], eta, label=name)
        ax[1].step(tr["time"], n, where="post", label=name)
        ax[2].plot(tr["time"], tr["V_bus"], label=name)
    ax[0].set_ylabel("efficiency")
    ax[1].set_ylabel("active agents")
    ax[2].set_ylabel("bus voltage (V)")
    ax[2].set_xlabel("time (s)")
    ax[0].legend()
    _save(fig, path)


def schedule(metrics, path, t_on):
    mask = metrics.traces.get("mask")
    fig, ax = plt.subplots(figsize=(8, 4))
    if mask is not None and mask.size:
        t = metrics.traces["time"]
        ax.imshow(mask.T, aspect="auto", interpolation="nearest", cmap="Greys",
                  extent=(t[0] / t_on, t[-1] / t_on, mask.shape[1] - 0.5, -0.5))
    ax.set_xlabel(f"schedule step (1 step = {t_on:g} s)")
    ax.set_ylabel("agent id")
    _save(fig, path)


def idle(rows, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar([str(r[0]) for r in rows], [r[1] for r in rows])
    ax.set_xlabel("total agents")
    ax.set_ylabel("average idle steps per agent")
    _save(fig, path)


def motor_surface(rows, path):
    arr = np.array(rows)
    fig, ax = plt.subplots(1, 2, figsize=(10, 4))
    for V in np.unique(arr[:, 0]):
        sel = arr[:, 0] == V
        ax[0].plot(arr[sel, 1] * 1e3, arr[sel, 3], label=f"{V:g} V")
        ax[1].plot(arr[sel, 1] * 1e3, arr[sel, 2] * 60 / (2 * np.pi), label=f"{V:g} V")
    ax[0].set_xlabel("torque (mN m)")
    ax[0].set_ylabel("efficiency")
    ax[1].set_xlabel("torque (mN m)")
    ax[1].set_ylabel("speed (rpm)")
    ax[0].legend(fontsize=8)
    _save(fig, path)
