"""Figure rendering for the report-producing commands.

Every figure is written next to its delimited output with deterministic
bytes (Agg backend, fixed metadata), so reruns of a command reproduce the
PNG exactly.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

PNG_META = {"Software": "dimslice"}
DPI = 150


def _save(fig, path) -> None:
    fig.savefig(path, dpi=DPI, metadata=PNG_META)
    plt.close(fig)


def save_loss_curve(losses, path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.4), constrained_layout=True)
    ax.plot(range(len(losses)), losses, lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("cross entropy (nats)")
    ax.set_title("training loss")
    ax.grid(alpha=0.3)
    _save(fig, path)


def save_sweep_figure(records, task_names, path) -> None:
    """Token perplexity and accuracies against sparsity."""
    n_panels = 2 if task_names else 1
    fig, axes = plt.subplots(1, n_panels, figsize=(5.0 * n_panels, 3.4), constrained_layout=True)
    axes = [axes] if n_panels == 1 else list(axes)
    s = [r.s for r in records]
    ppl = [r.token_ppl for r in records]
    axes[0].plot(s, ppl, "o-")
    axes[0].set_xlabel("sparsity s")
    axes[0].set_ylabel("token perplexity")
    axes[0].set_title("perplexity vs sparsity")
    axes[0].grid(alpha=0.3)
    if task_names:
        for name in task_names:
            axes[1].plot(s, [r.mc_acc.get(name) for r in records], "o-", label=name)
        axes[1].set_xlabel("sparsity s")
        axes[1].set_ylabel("accuracy")
        axes[1].set_title("choice accuracy vs sparsity")
        axes[1].legend(fontsize=8)
        axes[1].grid(alpha=0.3)
    _save(fig, path)


def save_fit_figure(s_values, y_values, fit, metric, transform, path) -> None:
    """Scatter of transformed sweep points with the fitted line."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4), constrained_layout=True)
    ax.scatter(s_values, y_values, zorder=3, label="measured")
    lo, hi = min(s_values), max(s_values)
    xs = [lo, hi]
    ax.plot(xs, [fit.a * x + fit.b for x in xs], color="C1", zorder=2,
            label=f"y = {fit.a:.3f} s + {fit.b:.3f} (rmse {fit.rmse:.3f})")
    ax.set_xlabel("sparsity s")
    ax.set_ylabel(transform)
    ax.set_title(f"{metric}: linear fit")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, path)


def save_entropy_figure(rows, path) -> None:
    """Measured entropy ratio against the ideal 1 - s line."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4), constrained_layout=True)
    s = [r[0] for r in rows]
    ax.plot(s, [r[1] for r in rows], "o-", label="measured H'/H")
    ax.plot(s, [r[2] for r in rows], "--", color="C1", label="1 - s")
    ax.set_xlabel("sparsity s")
    ax.set_ylabel("entropy ratio")
    ax.set_title("entropy ratio under column slicing")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, path)
