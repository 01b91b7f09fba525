"""Report figures written next to the CSV outputs (PNG, headless backend)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_sweep(rows, path):
    """Average and global recall against omega."""
    w = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(w, [100 * r[1] for r in rows], "o-", label="average recall")
    ax.plot(w, [100 * r[2] for r in rows], "s--", label="global recall")
    ax.set_xlabel("omega (0 = appearance only, 1 = location only)")
    ax.set_ylabel("recall (%)")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_ablation(rows, path):
    """Grouped bars: prior variant on the x axis, one bar per appearance model."""
    apps = list(dict.fromkeys(r[0] for r in rows))
    modes = list(dict.fromkeys(r[1] for r in rows))
    val = {(r[0], r[1]): 100 * r[2] for r in rows}
    x = np.arange(len(modes))
    width = 0.8 / len(apps)
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for i, a in enumerate(apps):
        ax.bar(x + (i - (len(apps) - 1) / 2) * width, [val.get((a, m), np.nan) for m in modes], width, label=a)
    ax.set_xticks(x)
    ax.set_xticklabels(modes)
    ax.set_ylabel("average recall (%)")
    ax.set_ylim(0, 100)
    ax.legend(title="appearance")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_matrix(M, names, path, title=None, vmin=-1.0, vmax=1.0):
    """Heat map of a class-by-class matrix (correlation or co-occurrence)."""
    M = np.asarray(M)
    fig, ax = plt.subplots(figsize=(1 + 0.45 * len(names), 0.8 + 0.45 * len(names)))
    im = ax.imshow(M, cmap="coolwarm" if vmin < 0 else "viridis", vmin=vmin, vmax=vmax)
    ax.set_xticks(range(len(names)))
    ax.set_yticks(range(len(names)))
    ax.set_xticklabels(names, rotation=90)
    ax.set_yticklabels(names)
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_confusion(conf, names, path):
    M = conf.counts.astype(np.float64)
    rows = M.sum(axis=1, keepdims=True)
    rows[rows == 0] = 1.0
    return plot_matrix(M / rows, names, path, "row-normalized confusion", 0.0, 1.0)
