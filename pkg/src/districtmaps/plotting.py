"""Figure rendering for distance and seat histograms.

Output is byte-stable for identical inputs: the Agg backend is forced, SVG
ids use a fixed salt and no timestamps are written.
"""
from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .analysis import DEFAULT_BINS, DistanceHistogram  # noqa: E402

PROBE_COLORS = ("tab:red", "tab:green", "tab:purple", "tab:orange", "tab:brown")


def _save(fig, path: str | Path) -> None:
    path = Path(path)
    fmt = path.suffix.lstrip(".").lower() or "png"
    meta = {"Date": None} if fmt in ("svg", "pdf") else {"Software": None}
    with matplotlib.rc_context({"svg.hashsalt": "districtmaps"}):
        fig.savefig(path, format=fmt, metadata=meta)
    plt.close(fig)


def render_distance_histogram(h: DistanceHistogram, path: str | Path,
                              probes: Mapping[str, float] | None = None,
                              bins: int = DEFAULT_BINS, title: str | None = None) -> None:
    """Histogram of ensemble d2 values with a vertical line per probe plan."""
    counts, edges = h.binned(bins)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.stairs(counts, edges, fill=True, color="0.6")
    for (name, value), color in zip((probes or {}).items(), PROBE_COLORS * 4):
        ax.axvline(value, color=color, linewidth=1.5, label=name)
    if probes:
        ax.legend(frameon=False)
    ax.set_xlabel(f"squared distance to centroid ({h.theta or 'theta'})")
    ax.set_ylabel("plans")
    ax.set_title(title or f"T = {h.T}")
    fig.tight_layout()
    _save(fig, path)


def render_seats_histogram(counts: np.ndarray, path: str | Path,
                           probes: Mapping[str, int] | None = None, title: str | None = None) -> None:
    counts = np.asarray(counts)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(np.arange(counts.size), counts, color="0.6", width=0.8)
    for (name, s), color in zip((probes or {}).items(), PROBE_COLORS * 4):
        ax.axvline(s, color=color, linewidth=1.5, label=name)
    if probes:
        ax.legend(frameon=False)
    ax.set_xticks(np.arange(counts.size))
    ax.set_xlabel("seats won by party A")
    ax.set_ylabel("plans")
    ax.set_title(title or f"T = {int(counts.sum())}")
    fig.tight_layout()
    _save(fig, path)
