"""Optional matplotlib rendering of sweep outputs (``--plot``).

Only used when figures are requested; the CSV files remain the primary
artifact and carry everything needed to redraw these plots elsewhere.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = ["render_figures", "plot_sum_rate", "plot_convergence"]

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 8,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _label(row, varying):
    names = {"scheme": "{}", "iqi_level": "{}", "num_ues": "K={}", "rx_antennas": "Nr={}",
             "tx_antennas": "Nt={}"}
    return ", ".join(names[k].format(row[k]) for k in varying) or "sum-rate"


def plot_sum_rate(summary, path) -> Path:
    """Mean per-subcarrier sum-rate versus power, one line per remaining grid coordinate."""
    plt = _pyplot()
    keys = ("scheme", "iqi_level", "num_ues", "rx_antennas", "tx_antennas")
    varying = [k for k in keys if len({r[k] for r in summary}) > 1]
    lines: dict[tuple, list] = {}
    for r in summary:
        lines.setdefault(tuple(r[k] for k in keys), []).append(r)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for rows in lines.values():
            rows = sorted(rows, key=lambda r: r["power_dbm"])
            x = np.array([r["power_dbm"] for r in rows])
            y = np.array([r["mean_sum_rate"] for r in rows])
            e = np.nan_to_num(np.array([r["stderr_sum_rate"] for r in rows]))
            ax.errorbar(x, y, yerr=e, marker="o", ms=3, capsize=2, label=_label(rows[0], varying))
        ax.set_xlabel("Transmit power per UE [dBm]")
        ax.set_ylabel("Average sum-rate [bit/s/Hz per subcarrier]")
        ax.legend()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_convergence(results, path, max_runs: int = 20) -> Path:
    """Objective traces of the first ``max_runs`` runs that recorded one."""
    plt = _pyplot()
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.2))
        for r in [r for r in results if r.trace][:max_runs]:
            it = [t.iteration for t in r.trace]
            ax1.plot(it, [t.objective for t in r.trace], lw=0.8)
            ax2.plot(it, [t.sum_rate for t in r.trace], lw=0.8)
        ax1.set_xlabel("Outer iteration")
        ax1.set_ylabel("WMMSE objective")
        ax2.set_xlabel("Outer iteration")
        ax2.set_ylabel("Sum-rate [bit/s/Hz]")
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def render_figures(results, summary, out_dir) -> list[Path]:
    out = Path(out_dir)
    return [plot_sum_rate(summary, out / "sum_rate.png"),
            plot_convergence(results, out / "convergence.png")]
