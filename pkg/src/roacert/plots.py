"""Figure rendering for reports (Agg backend, files only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from roacert.sim import Trajectory, ellipse_slice_points

__all__ = ["plot_sweep", "plot_trajectory", "plot_ellipse_slice"]


def plot_sweep(result, path) -> None:
    """trace(P_x) and det(P_x^{-1}) over the delta_v grid."""
    feas = [r for r in result.rows if r.feasible]
    infeas = [r for r in result.rows if not r.feasible]
    fig, axes = plt.subplots(2, 1, sharex=True, figsize=(6, 6))
    if feas:
        axes[0].plot([r.delta_v for r in feas], [r.trace_Px for r in feas],
                     "o-", label="feasible")
        axes[1].semilogy([r.delta_v for r in feas], [r.det_Pinv for r in feas],
                         "o-")
    for ax in axes:
        for r in infeas:
            ax.axvline(r.delta_v, color="red", alpha=0.2)
    best = result.best_volume
    if best is not None:
        axes[1].axvline(best.delta_v, color="green", linestyle="--",
                        label="max volume")
        axes[1].legend()
    axes[0].set_ylabel("trace(P_x)")
    axes[1].set_ylabel("det(P_x^-1)")
    axes[1].set_xlabel("delta_v")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_trajectory(traj: Trajectory, path, sample: int = 0) -> None:
    """States and inputs of one rollout sample over time."""
    x = traj.x[:, sample, :]
    u = traj.u[:, sample, :]
    fig, axes = plt.subplots(2, 1, sharex=True, figsize=(6, 6))
    for i in range(x.shape[1]):
        axes[0].plot(x[:, i], label=f"x{i}")
    for i in range(u.shape[1]):
        axes[1].plot(u[:, i], label=f"u{i}")
    axes[0].set_ylabel("state")
    axes[0].legend(loc="best", fontsize="small")
    axes[1].set_ylabel("input")
    axes[1].set_xlabel("k")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_ellipse_slice(P: np.ndarray, path, i: int = 0, j: int = 1,
                       center: np.ndarray | None = None,
                       trajectories: Trajectory | None = None) -> None:
    """Boundary of the certified ellipsoid slice, optionally with rollouts."""
    pts = ellipse_slice_points(P, i, j, 400, center)
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.plot(pts[:, 0], pts[:, 1], "b-", label="certified ellipsoid")
    if trajectories is not None:
        for k in range(min(trajectories.x.shape[1], 20)):
            ax.plot(trajectories.x[:, k, i], trajectories.x[:, k, j],
                    color="green", alpha=0.4, linewidth=0.7)
    if center is not None:
        ax.plot(center[i], center[j], "x", color="brown", markersize=8)
    ax.set_xlabel(f"x{i}")
    ax.set_ylabel(f"x{j}")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
