"""Figure rendering for run traces and sweep summaries.

Consumes the CSV files the simulator writes and drops PNG figures next to
them. Purely cosmetic: nothing here feeds back into experiments."""

from __future__ import annotations

import csv
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def _read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def plot_run(csv_path, out_dir) -> str:
    """Delay, cost and backlog traces of one run."""
    rows = _read_csv(csv_path)
    slots = [int(r["slot"]) for r in rows]
    delay = [float(r["avg_delay_s"]) for r in rows]
    cost = [float(r["total_cost_j"]) for r in rows]
    queue = [float(r["queue_after"]) for r in rows]

    fig, axes = plt.subplots(3, 1, figsize=(8, 9), sharex=True)
    axes[0].plot(slots, delay, lw=0.8)
    axes[0].set_ylabel("avg delay [s]")
    axes[1].plot(slots, cost, lw=0.8, color="tab:orange")
    axes[1].set_ylabel("slot cost [J]")
    axes[2].plot(slots, queue, lw=0.8, color="tab:green")
    axes[2].set_ylabel("queue backlog")
    axes[2].set_xlabel("slot")
    for ax in axes:
        ax.grid(True, alpha=0.3)
    fig.suptitle(os.path.basename(str(csv_path)))
    out_path = os.path.join(out_dir, os.path.splitext(os.path.basename(str(csv_path)))[0] + "_traces.png")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_sweep(summary_csv, out_dir) -> list[str]:
    """Trade-off curves against V (one line per scheduler) and, when the
    summary spans several sizes, decision time against the node count."""
    rows = _read_csv(summary_csv)
    written = []
    by_sched = defaultdict(list)
    for row in rows:
        by_sched[(row["scheduler"], row["m_factor"])].append(row)

    panels = (("avg_delay_s", "time-avg delay [s]"),
              ("avg_cost_j", "time-avg cost [J]"),
              ("final_queue_over_slots", "final backlog / slots"))
    fig, axes = plt.subplots(1, 3, figsize=(15, 4))
    for (sched, factor), group in sorted(by_sched.items()):
        group = sorted(group, key=lambda r: float(r["v"]))
        vs = [float(r["v"]) for r in group]
        label = sched if len({k[1] for k in by_sched}) == 1 else f"{sched} (x{factor})"
        for ax, (column, _label) in zip(axes, panels):
            ax.plot(vs, [float(r[column]) for r in group], marker="o", label=label)
    for ax, (_column, ylabel) in zip(axes, panels):
        ax.set_xscale("log")
        ax.set_xlabel("V")
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
    axes[0].legend()
    path = os.path.join(out_dir, "sweep_tradeoff.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    factors = sorted({int(r["m_factor"]) for r in rows})
    if len(factors) > 1:
        fig, ax = plt.subplots(figsize=(6, 4))
        scheds = sorted({r["scheduler"] for r in rows})
        for sched in scheds:
            pts = sorted(((int(r["m_factor"]), float(r["mean_decision_ms"]))
                          for r in rows if r["scheduler"] == sched))
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="s", label=sched)
        ax.set_xlabel("size factor")
        ax.set_ylabel("mean decision time [ms]")
        ax.grid(True, alpha=0.3)
        ax.legend()
        path = os.path.join(out_dir, "sweep_decision_time.png")
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def render_directory(src_dir, out_dir=None) -> list[str]:
    """Render figures for every recognized CSV under `src_dir`."""
    out_dir = src_dir if out_dir is None else out_dir
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name in sorted(os.listdir(src_dir)):
        if not name.endswith(".csv"):
            continue
        path = os.path.join(src_dir, name)
        if name.startswith(("run_", "scaling_")):
            written.append(plot_run(path, out_dir))
        elif name.startswith("sweep_summary"):
            written.extend(plot_sweep(path, out_dir))
    return written
