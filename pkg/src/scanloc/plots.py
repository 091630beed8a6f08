"""Figure rendering for CLI reports; all plots go to files (Agg backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .core import LidarFrame, Pose2
from .mcl import StepRecord
from .metrics import BenchRow
from .sim import WorldMap
from .train import TrainReport


def _draw_world(ax, world: WorldMap | None) -> None:
    if world is None:
        return
    for x0, y0, x1, y1 in world.segments:
        ax.plot([x0, x1], [y0, y1], color="black", linewidth=1.5)


def plot_loss_curves(report: TrainReport, path: str) -> None:
    epochs = [e.epoch for e in report.epochs]
    fig, ax1 = plt.subplots(figsize=(7, 4))
    ax1.plot(epochs, [e.geo_loss for e in report.epochs], "o-",
             color="tab:blue", label="range loss (m)")
    val = [(e.epoch, e.val_abs_err) for e in report.epochs
           if e.val_abs_err is not None]
    if val:
        ax1.plot(*zip(*val), "s--", color="tab:green",
                 label="validation abs err (m)")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("meters")
    ax2 = ax1.twinx()
    ax2.plot(epochs, [e.reg_loss for e in report.epochs], ":",
             color="tab:red", label="occupancy regularizer")
    ax2.set_ylabel("regularizer")
    lines1, labels1 = ax1.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax1.legend(lines1 + lines2, labels1 + labels2, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_trajectory(records: list[StepRecord], truth: list[Pose2] | None,
                    world: WorldMap | None, path: str) -> None:
    fig, ax = plt.subplots(figsize=(7, 6))
    _draw_world(ax, world)
    if truth:
        ax.plot([p.x for p in truth], [p.y for p in truth], "--",
                color="gray", label="ground truth")
    conv = [r for r in records if r.converged]
    pre = [r for r in records if not r.converged]
    if pre:
        ax.plot([r.pose.x for r in pre], [r.pose.y for r in pre], ".",
                color="tab:red", markersize=3, label="before convergence")
    if conv:
        ax.plot([r.pose.x for r in conv], [r.pose.y for r in conv], "-",
                color="tab:orange", label="estimate")
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_convergence(times: np.ndarray, errors: np.ndarray, path: str) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(times, errors, "-", color="tab:blue")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("location error (m)")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_scan(frame: LidarFrame, pose: Pose2, path: str,
              reference: LidarFrame | None = None,
              world: WorldMap | None = None) -> None:
    fig, ax = plt.subplots(figsize=(6, 6))
    _draw_world(ax, world)
    pts = frame.points(pose)
    ax.plot(pts[:, 0], pts[:, 1], ".", color="tab:blue", markersize=4,
            label="scan")
    if reference is not None:
        ref = reference.points(pose)
        ax.plot(ref[:, 0], ref[:, 1], "x", color="tab:red", markersize=4,
                label="reference")
    ax.plot([pose.x], [pose.y], "*", color="black", markersize=12)
    ax.set_aspect("equal")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_bench(rows: list[BenchRow], path: str) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    variants = sorted({r.variant for r in rows})
    for name in variants:
        sub = [r for r in rows if r.variant == name]
        sub.sort(key=lambda r: r.particles)
        ax.plot([r.particles for r in sub], [r.hz for r in sub], "o-",
                label=name)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("particles")
    ax.set_ylabel("filter steps per second (Hz)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_nog(values: np.ndarray, path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(values, origin="lower", cmap="gray_r", vmin=0.0, vmax=1.0)
    fig.colorbar(im, ax=ax, label="occupancy probability")
    ax.set_xlabel("cell x")
    ax.set_ylabel("cell y")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
