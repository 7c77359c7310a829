"""Matplotlib renderings of the prediction curves and cumulative-profit traces."""

from __future__ import annotations

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_STYLE = {
    "figure.figsize": (6.4, 4.0),
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
    "legend.frameon": False,
}


def savefig(fig, path) -> None:
    fig.savefig(path, dpi=150, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)


def prediction_figure(x, mean, variance, path, truth=None, *, xlabel="x1*", ylabel="statistic", title=None):
    """Posterior mean with a two-sigma band, plus the true curve when known."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        sd = np.sqrt(np.asarray(variance))
        ax.fill_between(x, mean - 2 * sd, mean + 2 * sd, color="C0", alpha=0.15, lw=0)
        ax.plot(x, mean, "o-", color="C0", ms=3, label="LFGP posterior mean")
        if truth is not None:
            ax.plot(x, truth, "--", color="C3", label="true value")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.legend()
        savefig(fig, path)


def cumulative_profit_figure(ledgers, path, *, title=None):
    """Cumulative profit against entry count, one line per stress level."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for ledger in ledgers:
            counts = np.arange(1, ledger.entry_count + 1)
            ax.plot(counts, ledger.cumulative, lw=1, label=f"alpha={ledger.alpha:g}")
        ax.axhline(0.0, color="0.5", lw=0.8)
        ax.set_xlabel("entry count")
        ax.set_ylabel("cumulative profit [stakes]")
        if title:
            ax.set_title(title)
        ax.legend()
        savefig(fig, path)
