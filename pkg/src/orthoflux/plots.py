"""Figure rendering for experiment reports (written next to the CSVs)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "plot_thermo_series",
    "plot_density",
    "plot_joint_histograms",
    "plot_residual_decay",
]


def plot_thermo_series(records, out_dir) -> list:
    """F(t) and e_p(t) line plots; returns the written paths."""
    t = np.array([r.t for r in records])
    paths = []
    for attr, label, fname in (("F", "free energy F(t)", "free_energy.png"),
                               ("ep", "entropy production e_p(t)", "entropy_production.png")):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(t, [getattr(r, attr) for r in records], lw=1.5)
        ax.set_xlabel("t")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = str(out_dir / fname)
        fig.savefig(path, dpi=130)
        plt.close(fig)
        paths.append(path)
    return paths


def plot_density(u, out_dir, fname="density.png", title="density") -> list:
    """Heatmap (2-D) or line plot (1-D) of a grid density."""
    grid = u.grid
    fig, ax = plt.subplots(figsize=(4.6, 4.0))
    if grid.dim == 2:
        im = ax.imshow(u.values.T, origin="lower", aspect="auto",
                       extent=(grid.bounds[0, 0], grid.bounds[0, 1],
                               grid.bounds[1, 0], grid.bounds[1, 1]),
                       cmap="viridis")
        fig.colorbar(im, ax=ax, shrink=0.85)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
    else:
        ax.plot(grid.axes[0], u.values.ravel())
        ax.set_xlabel("x")
        ax.set_ylabel("u")
    ax.set_title(title)
    fig.tight_layout()
    path = str(out_dir / fname)
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return [path]


def plot_joint_histograms(H_fwd, H_rev_T, out_dir) -> list:
    """Side-by-side heatmaps of the forward joint law and the swapped
    reversed law, plus their difference."""
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4))
    vmax = max(H_fwd.max(), H_rev_T.max())
    for ax, M, title in ((axes[0], H_fwd, "forward joint"),
                         (axes[1], H_rev_T, "reversed, swapped"),
                         (axes[2], H_fwd - H_rev_T, "difference")):
        vm = vmax if title != "difference" else np.abs(M).max() or 1.0
        im = ax.imshow(M, origin="lower", cmap="magma" if title != "difference" else "coolwarm",
                       vmin=(0 if title != "difference" else -vm), vmax=vm)
        ax.set_title(title, fontsize=9)
        ax.set_xlabel("end bin")
        ax.set_ylabel("start bin")
        fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    path = str(out_dir / "joint_histograms.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return [path]


def plot_residual_decay(h_values, residuals, out_dir, fname="residuals.png") -> list:
    """Log-log residual vs mesh size with a second-order reference slope."""
    h = np.asarray(h_values, dtype=float)
    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    for label, vals in residuals.items():
        ax.loglog(h, vals, "o-", label=label)
    ref = residuals[next(iter(residuals))][0] * (h / h[0]) ** 2
    ax.loglog(h, ref, "k--", lw=0.8, label="h^2")
    ax.set_xlabel("h")
    ax.set_ylabel("residual")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    path = str(out_dir / fname)
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return [path]
