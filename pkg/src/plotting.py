"""
SVG figures for reports: error CDFs, cost and error curves, trajectory overlays
and ranging scatters
"""

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib as mpl

mpl.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import EvalReport  # noqa: E402
from .scenario import SiteConfig  # noqa: E402
from .training import EpochRecord, HeldOutRecord, TrajectorySnapshot  # noqa: E402

# Fixed hash salt and no date metadata keep SVG output byte-stable.
mpl.rcParams.update({
    "svg.hashsalt": "ftm-sensor-aided",
    "svg.fonttype": "none",
    "font.size": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
})

FIG_SIZE = (6.4, 4.0)


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_cdf(report: EvalReport, path: Path, title: str | None = None) -> Path:
    fig, ax = plt.subplots(figsize=FIG_SIZE)
    for method, summary in report.summaries.items():
        ax.step(summary.cdf_grid, summary.cdf, where="post", label=method)
    ax.set_xlabel(f"{report.kind.capitalize()} error (m)")
    ax.set_ylabel("CDF")
    ax.set_ylim(0.0, 1.02)
    ax.set_xlim(left=0.0)
    ax.set_title(title or f"{report.kind.capitalize()} error CDF")
    ax.legend(loc="lower right")
    return _save(fig, path)


def plot_costs(history: Sequence[EpochRecord], path: Path) -> Path:
    epochs = [r.epoch for r in history]
    fig, ax = plt.subplots(figsize=FIG_SIZE)
    ax.plot(epochs, [r.train_cost for r in history], label="training")
    ax.plot(epochs, [r.val_cost for r in history], label="validation")
    best = [r for r in history if r.is_best]
    if best:
        ax.scatter([r.epoch for r in best], [r.val_cost for r in best], s=8, marker="o", label="snapshot")
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Alignment cost")
    ax.set_yscale("log")
    ax.legend(loc="upper right")
    return _save(fig, path)


def _draw_site(ax, site: SiteConfig) -> None:
    ax.add_patch(plt.Rectangle((0, 0), site.width, site.height, fill=False, color="0.3", lw=1.0))
    for wall in site.walls:
        pts = np.array(wall + ((wall[0],) if len(wall) >= 3 else ()))
        ax.plot(pts[:, 0], pts[:, 1], color="0.5", lw=1.5)
    aps = np.array(list(site.ap_positions().values()))
    ax.scatter(aps[:, 0], aps[:, 1], marker="^", color="k", s=25, label="AP", zorder=3)
    ax.set_aspect("equal")
    ax.set_xlim(-1, site.width + 1)
    ax.set_ylim(-1, site.height + 1)


def plot_trajectories(site: SiteConfig, truth: np.ndarray, estimates: Mapping[str, np.ndarray], path: Path,
                      pdr: np.ndarray | None = None) -> Path:
    """Site map with walls, APs, ground truth, estimates and the aligned PDR track."""
    fig, ax = plt.subplots(figsize=(FIG_SIZE[0], FIG_SIZE[0] * site.height / site.width + 0.5))
    _draw_site(ax, site)

    ax.plot(truth[:, 0], truth[:, 1], color="k", lw=1.2, ls="--", label="true")
    if pdr is not None:
        ax.plot(pdr[:, 0], pdr[:, 1], lw=1.0, label="PDR (aligned)")
    for method, points in estimates.items():
        ax.plot(points[:, 0], points[:, 1], lw=0.9, marker=".", ms=2, label=method)

    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.legend(loc="upper center", bbox_to_anchor=(0.5, -0.12), ncol=4)
    return _save(fig, path)


def plot_test_errors(records: Sequence[HeldOutRecord], path: Path) -> Path:
    epochs = [r.epoch for r in records]
    fig, ax = plt.subplots(figsize=FIG_SIZE)
    ax.plot(epochs, [r.ranging_mae for r in records], label="ranging")
    ax.plot(epochs, [r.positioning_mae for r in records], label="positioning")
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Test MAE (m)")
    ax.set_ylim(bottom=0.0)
    ax.legend(loc="upper right")
    return _save(fig, path)


def plot_epoch_trajectories(site: SiteConfig, truth: np.ndarray, snapshots: Sequence[TrajectorySnapshot],
                            path: Path) -> Path:
    """One site map per snapshot: true walk, Wi-Fi track and the PDR track moved onto it."""
    n = max(len(snapshots), 1)
    cols = min(n, 2)
    rows = (n + cols - 1) // cols
    panel = FIG_SIZE[0] / 1.5
    fig, axes = plt.subplots(rows, cols, figsize=(panel * cols, panel * site.height / site.width * rows + 0.8),
                             squeeze=False)
    for ax in axes.ravel()[len(snapshots):]:
        ax.set_visible(False)
    for ax, snap in zip(axes.ravel(), snapshots):
        _draw_site(ax, site)
        ax.plot(truth[:, 0], truth[:, 1], color="k", lw=1.0, ls="--", label="true")
        ax.plot(snap.positions[:, 0], snap.positions[:, 1], lw=0.9, marker=".", ms=2, label="nn")
        if snap.pdr is not None:
            ax.plot(snap.pdr[:, 0], snap.pdr[:, 1], lw=0.9, label="PDR (aligned)")
        ax.set_title(f"Epoch {snap.epoch}")
    if snapshots:
        axes.ravel()[0].legend(loc="upper center", bbox_to_anchor=(0.5, -0.08), ncol=4)
    return _save(fig, path)


def plot_range_scatter(d_true: np.ndarray, estimates: Mapping[str, np.ndarray], path: Path) -> Path:
    """Estimated against true distance, identity line for reference."""
    fig, ax = plt.subplots(figsize=(FIG_SIZE[1] + 0.5, FIG_SIZE[1]))
    top = float(max([np.max(d_true, initial=1.0)] + [np.max(d, initial=1.0) for d in estimates.values()]))
    ax.plot([0.0, top], [0.0, top], color="0.4", lw=0.8, ls=":")
    for method, d_hat in estimates.items():
        ax.scatter(d_true, d_hat, s=3, alpha=0.5, label=method)
    ax.set_xlabel("True distance (m)")
    ax.set_ylabel("Estimated distance (m)")
    ax.legend(loc="upper left")
    return _save(fig, path)


def plot_std_scatter(d_hat: np.ndarray, s_hat: np.ndarray, los: Sequence[bool | None], path: Path) -> Path:
    """Predicted std against predicted distance; links without a label are drawn as unknown."""
    fig, ax = plt.subplots(figsize=FIG_SIZE)
    labels = np.array(["unknown" if v is None else ("LOS" if v else "NLOS") for v in los])
    for label in ("LOS", "NLOS", "unknown"):
        mask = labels == label
        if mask.any():
            ax.scatter(np.asarray(d_hat)[mask], np.asarray(s_hat)[mask], s=3, alpha=0.6, label=label)
    ax.set_xlabel("Estimated distance (m)")
    ax.set_ylabel("Estimated std (m)")
    ax.set_ylim(bottom=0.0)
    ax.legend(loc="upper left")
    return _save(fig, path)
