"""Figure rendering for the experiment reports.

All figures are written as PNG files next to the delimited output.  The Agg
backend and fixed savefig metadata keep the bytes identical across reruns of
the same seeded experiment.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_SAVE_KW = {"dpi": 150, "metadata": {"Software": "cvarmax"}}


def _finish(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def plot_h_vs_alpha(alphas: Sequence[float], h_values: Sequence[float], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(alphas, h_values, "o-", color="tab:blue")
    ax.set_xscale("log")
    ax.set_xlabel(r"risk level $\alpha$")
    ax.set_ylabel("best objective value")
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def plot_h_traces(
    traces: Mapping[float, tuple[Sequence[float], Sequence[float]]], path
) -> Path:
    """One curve per risk level: objective value along the threshold grid."""
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    for alpha in sorted(traces):
        taus, values = traces[alpha]
        ax.plot(taus, values, label=rf"$\alpha$={alpha:g}")
    ax.set_xlabel(r"threshold $\tau$")
    ax.set_ylabel("objective value")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def plot_utility_hist(
    samples: Mapping[float, Sequence[float]], path, *, bins: int = 30
) -> Path:
    """Overlaid utility distributions of the selected sets per risk level."""
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    for alpha in sorted(samples):
        ax.hist(samples[alpha], bins=bins, alpha=0.45, label=rf"$\alpha$={alpha:g}")
    ax.set_xlabel("utility")
    ax.set_ylabel("scenario count")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_additive_term(alphas: Sequence[float], terms: Sequence[float], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(alphas, terms, "s-", color="tab:red")
    ax.set_xscale("log")
    ax.set_xlabel(r"risk level $\alpha$")
    ax.set_ylabel("additive guarantee slack")
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def plot_ota_compare(
    scales: Sequence[str],
    series: Mapping[str, Sequence[float]],
    path,
    *,
    ylabel: str,
) -> Path:
    """Grouped bars: one group per problem scale, one bar per dispatch mode."""
    fig, ax = plt.subplots(figsize=(6, 3.6))
    n_modes = len(series)
    width = 0.8 / max(n_modes, 1)
    for k, mode in enumerate(series):
        xs = [i + (k - (n_modes - 1) / 2) * width for i in range(len(scales))]
        ax.bar(xs, series[mode], width=width, label=mode)
    ax.set_xticks(range(len(scales)))
    ax.set_xticklabels(scales)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_coverage_map(inst, selections: Mapping[str, Sequence[int]], path) -> Path:
    """Obstacle grid with candidate sites; one marker style per selection."""
    fig, ax = plt.subplots(figsize=(4.6, 4.6))
    ax.imshow(inst.obstacle_mask(), origin="lower", cmap="Greys", vmin=0, vmax=1)
    xs = [c[0] for c in inst.candidates]
    ys = [c[1] for c in inst.candidates]
    ax.scatter(xs, ys, marker="o", s=30, color="tab:gray", label="candidates")
    markers = ["*", "^", "v", "P"]
    for k, (name, members) in enumerate(sorted(selections.items())):
        ax.scatter(
            [xs[i] for i in members],
            [ys[i] for i in members],
            marker=markers[k % len(markers)],
            s=120,
            label=name,
        )
    ax.legend(fontsize=8, loc="upper right")
    ax.set_xlim(-0.5, inst.width - 0.5)
    ax.set_ylim(-0.5, inst.height - 0.5)
    return _finish(fig, path)
