"""Report figures, drawn with the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_psnr_curve(curve, path, threshold: float | None = None) -> Path:
    """Held-out PSNR against the number of arrivals processed."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    x = [c[0] for c in curve]
    y = [c[2] for c in curve]
    ax.plot(x, y, "o-", color="tab:blue")
    if threshold is not None:
        ax.axhline(threshold, color="gray", ls="--", lw=1)
    ax.set_xlabel("client arrivals")
    ax.set_ylabel("held-out PSNR (dB)")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_noise_sweep(rows: list[dict], path, tol=(0.16, 1.0)) -> Path:
    """Initial against final pose error, translation and rotation."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.8))
    for ax, a, b, t, unit in (
        (axes[0], "init_trans_m", "final_trans_m", tol[0], "m"),
        (axes[1], "init_rot_deg", "final_rot_deg", tol[1], "deg"),
    ):
        x = np.array([r[a] for r in rows], dtype=float)
        y = np.array([r[b] for r in rows], dtype=float)
        ok = np.array([str(r["converged"]) in ("True", "true", "1") for r in rows])
        ax.scatter(x[ok], np.maximum(y[ok], 1e-4), s=14, label="converged")
        ax.scatter(x[~ok], np.maximum(y[~ok], 1e-4), s=14, marker="x", color="tab:red", label="flagged")
        ax.axhline(t, color="gray", ls="--", lw=1)
        ax.set_yscale("log")
        ax.set_xlabel(f"initial error ({unit})")
        ax.set_ylabel(f"final error ({unit})")
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=8)
    return _save(fig, path)


def plot_ablation(means: dict, path, xlabel: str) -> Path:
    """Mean normalized pose error per setting."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    keys = list(means)
    ax.bar([str(k) for k in keys], [means[k] for k in keys], color="tab:green")
    ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("mean error (tolerance units)")
    ax.grid(alpha=0.3, axis="y")
    return _save(fig, path)


def save_image(image, path) -> Path:
    """RGB array in [0, 1] as a PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    plt.imsave(path, np.clip(np.asarray(image, dtype=float), 0.0, 1.0))
    return path


def plot_depth(depth, path) -> Path:
    fig, ax = plt.subplots(figsize=(4, 4))
    im = ax.imshow(depth, cmap="viridis")
    fig.colorbar(im, ax=ax, fraction=0.046)
    ax.set_axis_off()
    return _save(fig, path)
