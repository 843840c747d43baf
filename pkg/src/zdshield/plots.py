"""SVG line plots of a scenario result."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed ids and no timestamp keep the SVG bytes reproducible
matplotlib.rcParams["svg.hashsalt"] = "zdshield"


def _plot(ax, t, y, **kw):
    if len(t) == 1:
        kw["linestyle"] = "none"
        ax.plot(t, y, marker="o", **kw)
    else:
        ax.plot(t, y, **kw)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def write_plots(result, out_dir) -> list:
    traj = result.trajectory
    t = traj.t
    paths = []

    fig, axes = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    for i, ax in enumerate(axes, start=1):
        _plot(ax, t, traj[f"ref{i}"], color="k", linestyle="--", label="reference")
        if f"x{i}_norec" in traj:
            _plot(ax, t, traj[f"x{i}_norec"], color="tab:red", label="attacked, no recovery")
        _plot(ax, t, traj[f"x{i}"], color="tab:blue", label="main run")
        ax.set_ylabel(f"level {i} [cm]")
    axes[0].legend(loc="best", fontsize=8)
    axes[-1].set_xlabel("t [s]")
    paths.append(_save(fig, os.path.join(out_dir, "outputs.svg")))

    fig, ax = plt.subplots(figsize=(8, 3.5))
    _plot(ax, t, traj["r_norm"], color="tab:gray", label="|r| raw")
    _plot(ax, t, traj["rc_norm"], color="tab:blue", label="|r| compensated")
    ax.axhline(result.detector.threshold, color="tab:red", linestyle=":", label="threshold")
    ax.set_yscale("symlog", linthresh=1e-3)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("residual norm [V]")
    ax.legend(loc="best", fontsize=8)
    paths.append(_save(fig, os.path.join(out_dir, "residuals.svg")))

    fig, axes = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    for i, ax in enumerate(axes, start=1):
        if f"z{i}_clean" in traj:
            _plot(ax, t, traj[f"z{i}_clean"], color="k", linestyle="--", label="attack-free")
        if f"z{i}_norec" in traj:
            _plot(ax, t, traj[f"z{i}_norec"], color="tab:red", label="no recovery")
        _plot(ax, t, traj[f"z{i}"], color="tab:blue", label="main run")
        ax.set_ylabel(f"z{i}")
    axes[0].legend(loc="best", fontsize=8)
    axes[-1].set_xlabel("t [s]")
    paths.append(_save(fig, os.path.join(out_dir, "zero_dynamics.svg")))

    fig, axes = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    for i, ax in enumerate(axes, start=1):
        _plot(ax, t, traj[f"alpha{i}"], color="tab:red", label="attack")
        _plot(ax, t, traj[f"zr{i}"], color="tab:blue", linestyle="--", label="estimate")
        ax.set_ylabel(f"input {i} [V]")
    axes[0].legend(loc="best", fontsize=8)
    axes[-1].set_xlabel("t [s]")
    paths.append(_save(fig, os.path.join(out_dir, "recovery.svg")))
    return paths
