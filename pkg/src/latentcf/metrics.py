"""In-distribution, sparsity and timing metrics, plus per-group aggregation."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

DEFAULT_BINS = 50
DEFAULT_BANDWIDTH = 0.05
DEFAULT_CHANGE_EPS = 1e-3
Z95 = 1.96

METRIC_NAMES = ("indist_score", "sparsity", "time_s")


@dataclass(frozen=True)
class PixelKde:
    """Row ``j`` is the smoothed intensity distribution of pixel ``j`` over ``bins`` bins."""

    table: np.ndarray  # (n_pixels, bins)
    bins: int
    bandwidth: float

    def bin_of(self, x) -> np.ndarray:
        return intensity_bins(x, self.bins)

    def pixel_probabilities(self, x) -> np.ndarray:
        """Smoothed probability of each pixel's bin; 0 for intensities outside [0, 1]."""
        x = np.asarray(x, dtype=np.float64)
        probs = self.table[np.arange(self.table.shape[0]), self.bin_of(x)]
        return np.where((x >= 0.0) & (x <= 1.0), probs, 0.0)


def intensity_bins(x, bins: int) -> np.ndarray:
    """Equal-width bin index on [0, 1]; values outside are clamped to the end bins."""
    x = np.asarray(x, dtype=np.float64)
    return np.clip(np.floor(x * bins), 0, bins - 1).astype(np.int64)


def gaussian_kernel(bins: int, bandwidth: float) -> np.ndarray:
    """Discretised Gaussian over bin offsets, truncated at 4 bandwidths, summing to 1.

    Index ``r`` of the result is the offset ``r - radius``.
    """
    radius = int(math.floor(4.0 * bandwidth * bins))
    radius = min(radius, bins - 1)
    offsets = np.arange(-radius, radius + 1) / bins
    k = np.exp(-0.5 * (offsets / bandwidth) ** 2)
    return k / k.sum()


def fit_kde(images, bins: int = DEFAULT_BINS, bandwidth: float = DEFAULT_BANDWIDTH) -> PixelKde:
    """Per-pixel histogram of the population, smoothed and normalised row-wise."""
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    if len(images) == 0:
        raise ValueError("KDE population is empty")
    if bins < 2:
        raise ValueError("need at least 2 bins")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    n, n_pix = images.shape
    idx = intensity_bins(images, bins)
    counts = np.zeros((n_pix, bins))
    np.add.at(counts, (np.broadcast_to(np.arange(n_pix), (n, n_pix)), idx), 1.0)

    kernel = gaussian_kernel(bins, bandwidth)
    radius = len(kernel) // 2
    # smoothing[src, dst]: mass a count in bin src spreads to bin dst
    smoothing = np.zeros((bins, bins))
    for src in range(bins):
        lo, hi = max(0, src - radius), min(bins, src + radius + 1)
        smoothing[src, lo:hi] = kernel[lo - src + radius:hi - src + radius]
    table = counts @ smoothing
    table /= table.sum(axis=1, keepdims=True)
    table.flags.writeable = False
    return PixelKde(table, bins, float(bandwidth))


def in_distribution_score(x, kde: PixelKde) -> float:
    """Mean over pixels of the smoothed probability of each pixel's intensity bin."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (kde.table.shape[0],):
        raise ValueError(f"image length {x.shape} does not match KDE ({kde.table.shape[0]})")
    return float(np.mean(kde.pixel_probabilities(x)))


def sparsity(x0, x_cf, change_eps: float = DEFAULT_CHANGE_EPS) -> float:
    """Fraction of features changed by more than ``change_eps``."""
    x0 = np.asarray(x0, dtype=np.float64)
    x_cf = np.asarray(x_cf, dtype=np.float64)
    if x0.shape != x_cf.shape:
        raise ValueError("vectors differ in length")
    if change_eps < 0:
        raise ValueError("change_eps must be non-negative")
    if x0.size == 0:
        return 0.0
    return float(np.mean(np.abs(x_cf - x0) > change_eps))


@dataclass(frozen=True)
class Summary:
    mean: float
    std: float
    ci_half_width: float
    n: int

    @property
    def degenerate(self) -> bool:
        return self.n < 2


def summarize(values: Iterable[float]) -> Summary:
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot summarize an empty group")
    if v.size == 1:
        return Summary(float(v[0]), 0.0, 0.0, 1)
    std = float(np.std(v, ddof=1))
    return Summary(float(np.mean(v)), std, Z95 * std / math.sqrt(v.size), int(v.size))


@dataclass(frozen=True)
class GroupStats:
    method: str
    target_p: float
    n: int
    metrics: Mapping[str, Summary]

    @property
    def degenerate(self) -> bool:
        return self.n < 2


@dataclass(frozen=True)
class MetricsReport:
    groups: tuple[GroupStats, ...]

    def get(self, method: str, target_p: float) -> GroupStats:
        for g in self.groups:
            if g.method == method and math.isclose(g.target_p, target_p):
                return g
        raise KeyError((method, target_p))

    def __iter__(self):
        return iter(self.groups)


def aggregate(records: Iterable[Mapping], metrics: tuple[str, ...] = METRIC_NAMES) -> MetricsReport:
    """Group records by ``(method, target_p)`` and summarise each metric.

    Records are mappings carrying ``method``, ``target_p`` and every name in
    ``metrics``. Groups are returned sorted by method then target_p.
    """
    buckets: dict[tuple[str, float], list[Mapping]] = defaultdict(list)
    for rec in records:
        buckets[(rec["method"], float(rec["target_p"]))].append(rec)
    groups = []
    for (method, p), rows in sorted(buckets.items()):
        stats = {m: summarize(float(r[m]) for r in rows) for m in metrics}
        groups.append(GroupStats(method, p, len(rows), stats))
    return MetricsReport(tuple(groups))
