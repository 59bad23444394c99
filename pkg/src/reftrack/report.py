"""Plain-text report tables and matplotlib figures written next to them."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .core import JOINT_NAMES
from .evaluate import METRIC_KEYS, MetricsReport

TABLE_HEADERS = ("method", "I.S.", "I.T.(h)", "1stoSMT", "2ndoSMT", "MAE", "RMSE",
                 "FMAE", "ETD-MAE", "ETD-FMAE")


def format_table(headers, rows) -> str:
    cols = [len(h) for h in headers]
    srows = [[str(c) for c in row] for row in rows]
    for row in srows:
        for i, c in enumerate(row):
            cols[i] = max(cols[i], len(c))
    def line(cells):
        return "  ".join(c.rjust(w) for c, w in zip(cells, cols))
    sep = "-" * (sum(cols) + 2 * (len(cols) - 1))
    return "\n".join([line(headers), sep] + [line(r) for r in srows]) + "\n"


def metrics_row(rep: MetricsReport):
    is_s = str(rep.interaction_steps) if rep.interaction_steps is not None else "-"
    it_s = f"{rep.interaction_hours:.2f}" if rep.interaction_steps is not None else "-"
    return ([rep.label, is_s, it_s]
            + [f"{rep.means[k]:.3f}" for k in METRIC_KEYS])


def comparison_table(reports) -> str:
    return format_table(TABLE_HEADERS, [metrics_row(r) for r in reports])


def ablation_noise_table(arms) -> str:
    headers = ("N.R.", "steps", "Tr.MPE", "Te.MPE", "MAE", "RMSE", "FMAE")
    rows = [[a.label, str(a.dataset_steps), f"{a.tr_mpe_deg:.3f}", f"{a.te_mpe_deg:.3f}",
             f"{a.report.means['mae_deg']:.3f}", f"{a.report.means['rmse_deg']:.3f}",
             f"{a.report.means['fmae_deg']:.3f}"] for a in arms]
    return format_table(headers, rows)


def ablation_smooth_table(arms) -> str:
    headers = ("k_smooth", "Po.MAE", "1stoSMT", "2ndoSMT", "MAE", "RMSE")
    rows = [[a.label.split("=")[-1], f"{a.po_mae_deg:.3f}",
             f"{a.report.means['smt1_deg']:.3f}", f"{a.report.means['smt2_deg']:.3f}",
             f"{a.report.means['mae_deg']:.3f}", f"{a.report.means['rmse_deg']:.3f}"]
            for a in arms]
    return format_table(headers, rows)


def save_tracking_figure(run, traj, path) -> None:
    """Measured vs desired vs commanded reference, one panel per joint."""
    pts = traj.points_array()
    qr = run.qr_time()
    t = np.arange(len(run)) * traj.dt
    fig, axes = plt.subplots(4, 1, figsize=(8, 9), sharex=True)
    for j, ax in enumerate(axes):
        ax.plot(t, pts[:, j], "k--", lw=1.2, label="desired")
        ax.plot(t, qr[:, j], color="tab:orange", lw=0.9, alpha=0.8, label="reference")
        ax.plot(t, run.obs[:, j], color="tab:blue", lw=1.2, label="measured")
        ax.set_ylabel(f"{JOINT_NAMES[j]} (rad)")
        ax.grid(alpha=0.3)
    axes[0].legend(loc="best", fontsize=8)
    axes[-1].set_xlabel("time (s)")
    fig.suptitle(f"tracking: {traj.id or 'trajectory'}")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_loss_figure(curve, path, title: str) -> None:
    if not curve:
        return
    keys = [k for k in curve[0] if k != "epoch"]
    epochs = [row["epoch"] for row in curve]
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for k in keys:
        ax.plot(epochs, [row[k] for row in curve], label=k)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_step_response_figure(responses, path) -> None:
    """responses: list of (joint name, t, q, qdot) for single-joint commands."""
    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for name, t, q, qdot, joint in responses:
        axes[0].plot(t, q[:, joint] - q[0, joint], label=name)
        axes[1].plot(t, qdot[:, joint], label=name)
    axes[0].set_ylabel("position change (rad)")
    axes[1].set_ylabel("velocity (rad/s)")
    axes[1].set_xlabel("time (s)")
    for ax in axes:
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def export_run_figures(record, trajs, fig_dir) -> list:
    os.makedirs(fig_dir, exist_ok=True)
    paths = []
    for run, traj in zip(record.runs, trajs):
        path = os.path.join(fig_dir, f"tracking_{traj.id or 'traj'}.png")
        save_tracking_figure(run, traj, path)
        paths.append(path)
    return paths
