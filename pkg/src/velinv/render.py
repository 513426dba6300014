"""Figure rendering to files: velocity maps, wavefield panels, histograms,
vertical profiles. All output is written to disk (Agg backend); velocity
maps share one fixed color scale so figures stay comparable.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .core import VMAX_GLOBAL, VMIN_GLOBAL, GridSpec

VELOCITY_CMAP = "viridis"
# Empty metadata keeps PNG bytes identical across reruns of the same seed.
_PNG_META = {"Software": None}


def _extent(grid: GridSpec):
    return (0.0, grid.width, grid.depth, 0.0)


def save_velocity_png(path, cp: np.ndarray, grid: GridSpec, title: str = "",
                      vmin: float = VMIN_GLOBAL, vmax: float = VMAX_GLOBAL) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    im = ax.imshow(cp, cmap=VELOCITY_CMAP, vmin=vmin, vmax=vmax,
                   extent=_extent(grid), aspect="auto")
    ax.set_xlabel("x, m")
    ax.set_ylabel("depth, m")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, label="velocity, m/s")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def save_snapshot_panel(path, snapshots, grid: GridSpec) -> Path:
    """One row of |v| magnitude panels; snapshots is [(time_s, field), ...]."""
    n = len(snapshots)
    if n == 0:
        raise ValueError("no snapshots to render")
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 2.8), squeeze=False)
    for ax, (t, field) in zip(axes[0], snapshots):
        scale = float(np.max(np.abs(field))) or 1.0
        ax.imshow(field, cmap="gray_r", vmin=0.0, vmax=scale,
                  extent=_extent(grid), aspect="auto")
        ax.set_title(f"t = {t:g} s", fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def save_ssim_histograms(out_dir, values_by_config: dict, shot_counts) -> list:
    """One PNG per shot count overlaying the SSIM distributions of its
    (fourier, regularization) variants. Keys are (shots, fourier, reg).
    """
    out_dir = Path(out_dir)
    written = []
    for shots in shot_counts:
        fig, ax = plt.subplots(figsize=(4.6, 3.4))
        any_data = False
        for (s, fourier, reg), vals in sorted(values_by_config.items()):
            if s != shots or not vals:
                continue
            any_data = True
            label = f"fourier={'on' if fourier else 'off'}, reg={'on' if reg else 'off'}"
            ax.hist(vals, bins=8, histtype="step", linewidth=1.4, label=label)
        ax.set_xlabel("test SSIM")
        ax.set_ylabel("count")
        ax.set_title(f"{shots}-shot populations")
        if any_data:
            ax.legend(fontsize=7)
        fig.tight_layout()
        path = out_dir / f"hist_shots{shots}.png"
        fig.savefig(path, dpi=120, metadata=_PNG_META)
        plt.close(fig)
        written.append(path)
    return written


def save_profile(out_base, x_m: float, depth_m: np.ndarray, truth: np.ndarray,
                 single: np.ndarray | None = None,
                 ensemble: np.ndarray | None = None) -> tuple[Path, Path]:
    """Vertical velocity profile at one x position, CSV plus line plot."""
    out_base = Path(out_base)
    csv_path = out_base.with_suffix(".csv")
    png_path = out_base.with_suffix(".png")

    columns = [("truth", truth)]
    if single is not None:
        columns.append(("single_model", single))
    if ensemble is not None:
        columns.append(("ensemble", ensemble))
    with open(csv_path, "w") as f:
        f.write("depth_m," + ",".join(name for name, _ in columns) + "\n")
        for k, d in enumerate(depth_m):
            f.write(f"{d!r}," + ",".join(repr(float(col[k])) for _, col in columns) + "\n")

    fig, ax = plt.subplots(figsize=(4.2, 3.4))
    styles = {"truth": dict(color="k", lw=1.6), "single_model": dict(color="tab:orange", lw=1.2),
              "ensemble": dict(color="tab:blue", lw=1.2)}
    for name, col in columns:
        ax.plot(depth_m, col, label=name.replace("_", " "), **styles[name])
    ax.set_xlabel("depth, m")
    ax.set_ylabel("velocity, m/s")
    ax.set_title(f"x = {x_m:g} m")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return csv_path, png_path


def save_training_curves(path, history) -> Path:
    fig, ax1 = plt.subplots(figsize=(5.0, 3.4))
    epochs = np.arange(len(history.train_loss))
    ax1.plot(epochs, history.train_loss, color="tab:red", lw=1.3, label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss", color="tab:red")
    ax2 = ax1.twinx()
    ax2.plot(epochs, history.val_ssim, color="tab:blue", lw=1.3, label="val SSIM")
    ax2.set_ylabel("validation SSIM", color="tab:blue")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)
