"""Figures for benchmark reports. Writes files only; never opens a window."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STAGE_COLORS = {"build": "#52528f", "cluster": "#418d29", "erase": "#f2583c"}

_RC = {
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "xtick.labelsize": 9,
    "ytick.labelsize": 9,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def plot_stage_timings(report, path):
    """Bar chart of median per-stage wall time from a bench report."""
    timing = report["timing_ms"]
    stages = [("build", timing["build_ms"]), ("cluster", timing["cluster_ms"]),
              ("erase", timing["per_prompt_erase_ms"])]
    cfg = report["config"]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        names = [s for s, _ in stages]
        ax.bar(names, [v for _, v in stages], color=[STAGE_COLORS[s] for s in names], width=0.6)
        for i, (_, v) in enumerate(stages):
            ax.annotate(f"{v:.1f}", (i, v), ha="center", va="bottom", fontsize=8)
        ax.set_ylabel("median wall time (ms)")
        ax.set_title(f"M={cfg['count']}, D={cfg['dim']}, {cfg['concepts']} concepts", fontsize=10)
        fig.savefig(path)
        plt.close(fig)


def plot_threshold_sweep(rows, path):
    """Mean degree and build time against the base threshold."""
    taus = [r["tau0"] for r in rows]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        ax.plot(taus, [r["mean_degree"] for r in rows], "o-", color="#52528f", label="mean degree")
        ax.set_xlabel(r"base threshold $\tau_0$")
        ax.set_ylabel("mean degree", color="#52528f")
        ax2 = ax.twinx()
        ax2.spines["right"].set_visible(True)
        ax2.plot(taus, [r["build_ms"] for r in rows], "s--", color="#f2583c", label="build time")
        ax2.set_ylabel("median build time (ms)", color="#f2583c")
        fig.savefig(path)
        plt.close(fig)
