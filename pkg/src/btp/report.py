"""Figure rendering for loop metrics, sweep tables, and buffer stats.

Figures are written next to the delimited outputs by the CLI report
paths; everything uses the Agg backend so headless runs work.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def save_loop_figure(result, path) -> None:
    """Pass-rate and accuracy curves over loop iterations (0 = baseline)."""
    records = [result.baseline] + result.history
    xs = [m.iteration for m in records]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, [m.mean_pass_rate for m in records], marker="o",
            label="mean best-of-k pass rate")
    ax.plot(xs, [m.accuracy_rate for m in records], marker="s",
            label="accuracy rate")
    ax.set_xlabel("iteration")
    ax.set_ylabel("rate")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def save_sweep_figure(table, path) -> None:
    """One pass-rate line per task group across the swept values."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for j, group in enumerate(table.groups):
        ax.plot(table.values, [row[j] for row in table.cells], marker="o", label=group)
    ax.set_xlabel(table.parameter)
    ax.set_ylabel("final mean pass rate")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def save_score_histogram(scores, path, bins: int = 20) -> None:
    """Histogram of priority scores over [0, 1]."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(list(scores), bins=bins, range=(0.0, 1.0), edgecolor="black")
    ax.set_xlabel("priority score")
    ax.set_ylabel("entries")
    ax.grid(alpha=0.3)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
