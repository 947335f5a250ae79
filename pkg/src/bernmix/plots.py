"""Report figures rendered straight to files.

Each fit or regression report gets its figures next to the delimited
outputs: per-profile indicator probability bars, assignment probability
spreads, the occupied-component histogram, and the odds-ratio forest.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .postprocess import ProfileSummary
from .sampler import PosteriorSamples

BAR_COLOR = "#4878a8"
ACCENT_COLOR = "#c44e52"


def plot_profile_probabilities(summary: ProfileSummary, path, dpi: int = 150) -> None:
    """One panel per profile: posterior probability of each indicator."""
    k = summary.k_profiles
    p = len(summary.column_names)
    sizes = summary.sizes
    n = len(summary.unit_ids)
    fig, axes = plt.subplots(
        k, 1, figsize=(max(6.0, 0.45 * p), 1.9 * k), sharex=True, squeeze=False
    )
    xs = np.arange(p)
    for c in range(k):
        ax = axes[c, 0]
        ax.bar(xs, summary.theta_mean[:, c], color=BAR_COLOR, width=0.72)
        ax.set_ylim(0, 1)
        ax.set_ylabel("probability", fontsize=8)
        ax.set_title(
            f"profile {c + 1} ({sizes[c]} units, {sizes[c] / n:.0%})",
            fontsize=9,
            loc="left",
        )
        ax.axhline(0.5, color="0.8", linewidth=0.8, zorder=0)
    axes[-1, 0].set_xticks(xs)
    axes[-1, 0].set_xticklabels(summary.column_names, rotation=60, ha="right", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)


def plot_assignment_probabilities(summary: ProfileSummary, path, dpi: int = 150) -> None:
    """Spread of assignment probabilities among each profile's members."""
    k = summary.k_profiles
    groups = [
        summary.assignment_probability[summary.hard_assignment == c, c]
        for c in range(k)
    ]
    fig, ax = plt.subplots(figsize=(max(5.0, 0.9 * k), 3.4))
    ax.boxplot(
        [g if g.size else np.array([np.nan]) for g in groups],
        tick_labels=[f"{c + 1}" for c in range(k)],
    )
    ax.set_xlabel("profile")
    ax.set_ylabel("assignment probability")
    ax.set_ylim(0, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)


def plot_k_distribution(samples: PosteriorSamples, path, dpi: int = 150) -> None:
    """Histogram of the occupied-component count over retained draws."""
    dist = samples.k_nonempty_distribution()
    support = np.flatnonzero(dist > 0)
    lo, hi = int(support.min()), int(support.max())
    # one empty pad bar each side, clipped to the pmf's support array
    xs = np.arange(max(1, lo - 1), min(hi + 1, len(dist) - 1) + 1)
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.bar(xs, dist[xs], color=BAR_COLOR, width=0.8)
    ax.set_xlabel("occupied components")
    ax.set_ylabel("posterior probability")
    ax.set_xticks(xs)
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)


def plot_forest(payload: dict, path, dpi: int = 150) -> None:
    """Odds ratios with credible intervals on a log axis, reference at 1."""
    rows = payload["rows"]
    if not rows:
        raise ValueError("no coefficients to plot")
    labels = [row["label"] for row in rows]
    centers = np.asarray([row["odds_ratio"] for row in rows])
    lowers = np.asarray([row["lower"] for row in rows])
    uppers = np.asarray([row["upper"] for row in rows])
    ys = np.arange(len(rows))[::-1]
    fig, ax = plt.subplots(figsize=(6.0, 0.45 * len(rows) + 1.6))
    ax.errorbar(
        centers,
        ys,
        xerr=np.vstack([centers - lowers, uppers - centers]),
        fmt="o",
        color=BAR_COLOR,
        ecolor="0.4",
        capsize=3,
    )
    ax.axvline(payload.get("reference_line", 1.0), color=ACCENT_COLOR, linewidth=1.0)
    ax.set_xscale("log")
    ax.set_yticks(ys)
    ax.set_yticklabels(labels, fontsize=8)
    ax.set_xlabel("odds ratio (log scale)")
    if payload.get("title"):
        ax.set_title(payload["title"], fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
