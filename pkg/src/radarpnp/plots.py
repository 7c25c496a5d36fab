"""Figure rendering for CLI reports: sweep curves, alpha searches, volume views."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_PRIOR_STYLE = {
    "bp": dict(color="tab:gray", marker="s"),
    "identity": dict(color="tab:brown", marker="x"),
    "l1": dict(color="tab:blue", marker="o"),
    "tv": dict(color="tab:green", marker="^"),
    "pnp": dict(color="tab:red", marker="D"),
}


def save_sweep_figure(path, axis_name, axis_labels, means_by_prior) -> None:
    """Line plot of mean PSNR per prior against the sweep axis."""
    fig, ax = plt.subplots(figsize=(6, 4), constrained_layout=True)
    x = np.arange(len(axis_labels))
    for prior, means in means_by_prior.items():
        finite = [m if math.isfinite(m) else np.nan for m in means]
        ax.plot(x, finite, label=prior, **_PRIOR_STYLE.get(prior, {}))
    ax.set_xticks(x, axis_labels)
    ax.set_xlabel(axis_name)
    ax.set_ylabel("mean PSNR (dB)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_alpha_figure(path, coarse_rows, fine_rows, best_alpha) -> None:
    """Semilog plot of validation PSNR over the regularization strength grid."""
    fig, ax = plt.subplots(figsize=(6, 4), constrained_layout=True)
    for rows, label, marker in ((coarse_rows, "coarse", "o"), (fine_rows, "fine", ".")):
        if rows:
            a = [r["alpha"] for r in rows]
            p = [r["psnr"] if math.isfinite(r["psnr"]) else np.nan for r in rows]
            ax.semilogx(a, p, marker, label=label)
    ax.axvline(best_alpha, color="tab:red", ls="--", lw=1, label=f"best = {best_alpha:.3g}")
    ax.set_xlabel("alpha")
    ax.set_ylabel("mean validation PSNR (dB)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_projections_figure(path, volume, title=None) -> None:
    """Maximum-intensity projections of |volume| along each grid axis."""
    mags = np.abs(volume.as_grid())
    views = (
        ("x-y (max over z)", mags.max(axis=2), "x", "y"),
        ("x-z (max over y)", mags.max(axis=1), "x", "z"),
        ("y-z (max over x)", mags.max(axis=0), "y", "z"),
    )
    fig, axes = plt.subplots(1, 3, figsize=(11, 4), constrained_layout=True)
    for ax, (name, img, xl, yl) in zip(axes, views):
        im = ax.imshow(img.T, origin="lower", cmap="inferno", aspect="auto")
        ax.set_title(name, fontsize=10)
        ax.set_xlabel(xl)
        ax.set_ylabel(yl)
        fig.colorbar(im, ax=ax, shrink=0.8)
    if title:
        fig.suptitle(title)
    fig.savefig(path, dpi=150)
    plt.close(fig)
