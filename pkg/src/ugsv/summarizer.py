"""Turn probability curves into highlight summaries.

Summaries are per-second: each selected segment contributes its centre second.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .classifier import ProbabilityCurve
from .dataset import HighlightRun, extract_highlight_runs, load_runs, runs_to_labels, save_runs
from .features import kmeans


@dataclass
class SummaryEDL:
    video_id: str
    intervals: list = field(default_factory=list)
    selected_theta: float = 1.0

    def __post_init__(self):
        self.intervals = [HighlightRun(int(s), int(e)) for s, e in self.intervals]
        check_intervals(self.intervals)

    @property
    def duration(self) -> int:
        return sum(r.end - r.start for r in self.intervals)

    def seconds(self) -> np.ndarray:
        if not self.intervals:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([np.arange(s, e) for s, e in self.intervals])

    def to_labels(self, T: int) -> np.ndarray:
        return runs_to_labels(self.intervals, T)

    def save(self, path) -> None:
        save_runs(self.intervals, path)

    @classmethod
    def load(cls, path, video_id: str | None = None) -> "SummaryEDL":
        return cls(video_id or Path(path).stem, load_runs(path), float("nan"))


def check_intervals(intervals) -> None:
    """Raise unless intervals are non-empty, sorted and pairwise disjoint."""
    prev_end = None
    for s, e in intervals:
        if e <= s:
            raise ValueError(f"empty interval [{s}, {e})")
        if prev_end is not None and s < prev_end:
            raise ValueError(f"intervals overlap or are unsorted at [{s}, {e})")
        prev_end = e


def seconds_to_edl(video_id: str, seconds, T: int, theta: float) -> SummaryEDL:
    mask = np.zeros(T, dtype=np.int64)
    mask[np.asarray(seconds, dtype=np.int64)] = 1
    return SummaryEDL(video_id, extract_highlight_runs(mask), float(theta))


def skim_order(p) -> np.ndarray:
    """Seconds by decreasing probability, earlier second first on ties."""
    p = np.asarray(p, dtype=np.float64)
    return np.lexsort((np.arange(len(p)), -p))


def skim_select(curve: ProbabilityCurve, L: int) -> SummaryEDL:
    """Lower a threshold from 1 until the summary would exceed ``L`` seconds.

    Implemented as the ``L`` highest-probability seconds; ``selected_theta``
    is the probability of the last admitted second.
    """
    T = len(curve.p)
    if not 0 <= L <= T:
        raise ValueError(f"summary length {L} outside [0, {T}]")
    chosen = skim_order(curve.p)[:L]
    theta = float(curve.p[chosen[-1]]) if L > 0 else 1.0
    return seconds_to_edl(curve.video_id, chosen, T, theta)


def threshold_select(curve: ProbabilityCurve, theta: float) -> SummaryEDL:
    """Every second whose probability exceeds ``theta``."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta {theta} outside [0, 1]")
    p = np.asarray(curve.p)
    return SummaryEDL(curve.video_id, extract_highlight_runs(p > theta), float(theta))


def kmeans_baseline(features, L: int, seed: int = 0, video_id: str = "video") -> SummaryEDL:
    """Cluster per-second features into ``L`` groups and keep the real second nearest each centroid.

    When two centroids share a nearest second the later centroid takes its
    next-nearest unused second, so the summary always has ``L`` seconds.
    """
    Z = np.ascontiguousarray(features, dtype=np.float64)
    T = Z.shape[0]
    if not 1 <= L <= T:
        raise ValueError(f"summary length {L} outside [1, {T}]")
    if L == T:
        return seconds_to_edl(video_id, np.arange(T), T, 0.0)
    C, _, _ = kmeans(Z, L, seed=seed)
    used = np.zeros(T, dtype=bool)
    chosen = []
    for k in range(L):
        _, d2 = kernels.nearest(Z, C[k:k + 1])
        for t in np.lexsort((np.arange(T), d2)):
            if not used[t]:
                used[t] = True
                chosen.append(int(t))
                break
    return seconds_to_edl(video_id, chosen, T, float("nan"))
