"""Matplotlib figures for reports: risk curves and training traces."""

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

golden_mean = (np.sqrt(5) - 1.0) / 2.0
fig_width = 5.0
fig_size = [fig_width, fig_width * golden_mean]

params = {
    "axes.labelsize": 10,
    "font.family": "serif",
    "font.size": 9,
    "mathtext.fontset": "stix",
    "legend.fontsize": 7,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": fig_size,
    "figure.dpi": 150,
    "lines.linewidth": 1.2,
    "lines.markersize": 3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "idg",
}


def plot_curves(curves, path):
    with matplotlib.rc_context(params):
        fig, ax = plt.subplots()
        for c in curves:
            style = "k--" if c.label == "ideal" else "-"
            ax.plot(c.lambda_grid, c.values, style, marker="o", label=c.label)
        ax.set_xlabel(r"$\lambda_{\mathrm{op}}$")
        ax.set_ylabel("aggregated risk")
        ax.set_xlim(0, 1)
        ax.legend(loc="best")
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)


def plot_trace(trace, path):
    """Gradient norm and Beta shape parameters per outer step."""
    rows = trace.rows
    steps = [r[0] for r in rows]
    with matplotlib.rc_context(params):
        fig, (ax0, ax1) = plt.subplots(2, 1, sharex=True)
        ax0.semilogy(steps, [max(r[3], 1e-300) for r in rows])
        ax0.set_ylabel(r"$\|v\|$")
        ax1.plot(steps, [r[1] for r in rows], label=r"$\alpha$")
        ax1.plot(steps, [r[2] for r in rows], label=r"$\beta$")
        ax1.set_xlabel("step")
        ax1.set_ylabel("shape")
        ax1.legend(loc="best")
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
