"""Figures written next to the delimited outputs."""
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "savefig.dpi": 150,
})


def plot_residual(grid, path, title=None):
    """Heat map of g(phi_hat) over the unit square."""
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    extent = (0, 1, 0, 1)
    im = ax.imshow(grid.g_phi_hat.T, origin="lower", extent=extent, cmap="viridis",
                   interpolation="nearest", aspect="equal")
    fig.colorbar(im, ax=ax, label=r"$g\circ\hat\phi$")
    ax.set_xlabel("u")
    ax.set_ylabel("v")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_sweep(rows, path):
    """Box plots of p(H0|Y) against lambda, one panel per (n, rho)."""
    panels = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if np.isfinite(r["p_H0"]):
            panels[(r["n"], r["rho"])][r["lambda"]].append(r["p_H0"])
    keys = sorted(panels)
    fig, axes = plt.subplots(1, max(len(keys), 1), figsize=(3.2 * max(len(keys), 1), 2.8),
                             squeeze=False)
    for ax, key in zip(axes[0], keys):
        lams = sorted(panels[key])
        ax.boxplot([panels[key][lv] for lv in lams], tick_labels=[f"{lv:g}" for lv in lams],
                   medianprops={"linewidth": 2, "color": "k"})
        ax.axhline(0.5, ls=":", color="grey", lw=0.8)
        ax.set_ylim(-0.05, 1.05)
        ax.set_xlabel(r"$\lambda$")
        ax.set_ylabel(r"$\hat p(H_0|Y)$")
        ax.set_title(f"n={key[0]}, rho={key[1]:.3g}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
