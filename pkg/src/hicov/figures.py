"""Matplotlib renderings of the report artifacts (headless, file output only)."""

from __future__ import annotations

import numpy as np

__all__ = ["correlation_heatmap", "rate_curves"]


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def correlation_heatmap(corr, mask=None, labels=None, sector_of=None, path=None,
                        title=None):
    """Heatmap of a correlation matrix with masked entries blanked.

    Sector boundaries (contiguous runs of equal sector labels) are outlined,
    mirroring the usual block-structure display.  Tick labels are drawn only
    for small matrices.
    """
    plt = _plt()
    m = corr.shape[0]
    data = np.ma.masked_array(corr, mask=mask if mask is not None else False)
    fig, ax = plt.subplots(figsize=(7.5, 6.5))
    cmap = plt.get_cmap("RdBu_r").copy()
    cmap.set_bad(color="white")
    im = ax.imshow(data, vmin=-1.0, vmax=1.0, cmap=cmap, interpolation="nearest")
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    if sector_of is not None:
        edges = [0] + [
            k for k in range(1, m) if sector_of[k] != sector_of[k - 1]
        ] + [m]
        for lo, hi in zip(edges[:-1], edges[1:]):
            ax.add_patch(
                plt.Rectangle(
                    (lo - 0.5, lo - 0.5), hi - lo, hi - lo,
                    fill=False, edgecolor="purple", linewidth=1.2,
                )
            )
    if labels is not None and m <= 40:
        ax.set_xticks(range(m))
        ax.set_yticks(range(m))
        ax.set_xticklabels(labels, rotation=90, fontsize=6)
        ax.set_yticklabels(labels, fontsize=6)
    else:
        ax.set_xticks([])
        ax.set_yticks([])
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def rate_curves(n_grid, series, ylabel, path, alpha=None, title=None):
    """Line plot of a rate (FWER or power) against the sample-size grid.

    ``series`` maps a curve label to its list of values along ``n_grid``.
    """
    plt = _plt()
    from matplotlib.ticker import ScalarFormatter

    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for label, values in series.items():
        ax.plot(n_grid, values, marker="o", label=label)
    if alpha is not None:
        ax.axhline(alpha, color="grey", linestyle="--", linewidth=1.0,
                   label=f"level {alpha:g}")
    ax.set_xlabel("n")
    ax.set_ylabel(ylabel)
    ax.set_xscale("log")
    ax.set_xticks(list(n_grid))
    ax.xaxis.set_major_formatter(ScalarFormatter())
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
