"""Figure rendering for the report and analyze paths.

Every figure is written next to its delimited data file, so the PNGs are a
view over the CSVs rather than a separate pipeline.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_accuracy_curves(reports: dict, path) -> None:
    """Top-1 accuracy per state, one line per method."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name in sorted(reports):
        report = reports[name]
        states = [s.state for s in report.per_state]
        ax.plot(states, [s.top1 for s in report.per_state], marker="o", label=name)
    ax.set_xlabel("incremental state")
    ax.set_ylabel("top-1 accuracy (%)")
    ax.set_ylim(0, 100)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_typology(report, path) -> None:
    """Stacked past/new outcome percentages per state for one method."""
    states = [s.state for s in report.per_state if s.typology.past is not None]
    if not states:
        return
    past = np.array(
        [s.typology.past for s in report.per_state if s.typology.past is not None]
    )
    new = np.array(
        [s.typology.new for s in report.per_state if s.typology.past is not None]
    )
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    for ax, data, labels, title in (
        (axes[0], past, ("c(p)", "e(p,p)", "e(p,n)"), "past-class test samples"),
        (axes[1], new, ("c(n)", "e(n,n)", "e(n,p)"), "new-class test samples"),
    ):
        bottom = np.zeros(len(states))
        for i, label in enumerate(labels):
            ax.bar(states, data[:, i], bottom=bottom, label=label)
            bottom += data[:, i]
        ax.set_xlabel("incremental state")
        ax.set_title(title)
        ax.legend(fontsize=8)
    axes[0].set_ylabel("% of group")
    fig.suptitle(report.method)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_magnitudes(raw_profile, standardized_profile, path) -> None:
    """New- vs past-class mean weight magnitudes, raw and standardized."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, profile, title in (
        (axes[0], raw_profile, "raw classifiers"),
        (axes[1], standardized_profile, "standardized initial classifiers"),
    ):
        states = [r[0] for r in profile.rows]
        ax.plot(states, [r[1] for r in profile.rows], marker="o", label="new classes")
        past = [(r[0], r[2]) for r in profile.rows if r[2] is not None]
        if past:
            ax.plot([p[0] for p in past], [p[1] for p in past], marker="s", label="past classes")
        ax.set_xlabel("incremental state")
        ax.set_ylabel("mean |w|")
        ax.set_title(title)
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_similarity(profiles: dict, path) -> None:
    """Mean feature cosine similarity vs the reference state, per chain."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label in sorted(profiles):
        profile = profiles[label]
        states = [r[0] for r in profile.rows]
        ax.plot(states, [r[1] for r in profile.rows], marker="o", label=label)
    ax.set_xlabel("state")
    ax.set_ylabel("mean cosine similarity")
    ax.set_ylim(0, 1.05)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_distributions(stats: list, class_ids: list, path, max_panels: int = 6) -> None:
    """Histogram panels for a subset of classifier rows."""
    take = min(max_panels, len(stats))
    fig, axes = plt.subplots(2, (take + 1) // 2, figsize=(3.2 * ((take + 1) // 2), 6))
    axes = np.atleast_1d(axes).ravel()
    for ax, st, cid in zip(axes, stats[:take], class_ids[:take]):
        edges = np.asarray(st.bin_edges)
        widths = np.diff(edges)
        ax.bar(edges[:-1], st.histogram, width=widths, align="edge")
        ax.set_title(f"class {cid} (skew {st.skewness:.2f})", fontsize=9)
    for ax in axes[take:]:
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
