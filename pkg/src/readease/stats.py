"""Mergeable accumulators and the small fits run over per-ZCTA aggregates."""

from __future__ import annotations

import logging
import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_SE_FLOOR = 0.01


@dataclass
class RunningStats:
    """Welford accumulator: count, mean and sum of squared deviations."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def update(self, x: float) -> RunningStats:
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)
        return self

    def extend(self, xs: Iterable[float]) -> RunningStats:
        for x in xs:
            self.update(x)
        return self

    @classmethod
    def from_values(cls, xs) -> RunningStats:
        """Two-pass batch statistics; equivalent to updating one by one."""
        a = np.asarray(xs, dtype=float)
        if a.size == 0:
            return cls()
        mean = float(a.mean())
        d = a - mean
        return cls(int(a.size), mean, float(d @ d))

    @property
    def variance(self) -> float:
        if self.n < 2:
            raise ValueError("variance needs at least 2 observations")
        return self.m2 / (self.n - 1)

    @property
    def se(self) -> float:
        return summarize(self)[1]

    def copy(self) -> RunningStats:
        return RunningStats(self.n, self.mean, self.m2)


def merge(a: RunningStats, b: RunningStats) -> RunningStats:
    """Combine two accumulators (Chan et al. pairwise update)."""
    if b.n == 0:
        return a.copy()
    if a.n == 0:
        return b.copy()
    n = a.n + b.n
    delta = b.mean - a.mean
    mean = a.mean + delta * (b.n / n)
    m2 = a.m2 + b.m2 + delta * delta * (a.n * b.n / n)
    return RunningStats(n, mean, m2)


def summarize(stats: RunningStats) -> tuple[float, float]:
    """Return ``(mean, standard error)``; the SE needs n >= 2."""
    if stats.n < 2:
        raise ValueError(f"standard error needs n >= 2, got n={stats.n}")
    sd = math.sqrt(max(stats.m2, 0.0) / (stats.n - 1))
    return stats.mean, sd / math.sqrt(stats.n)


def _n_bins(lo: float, hi: float, width: float) -> int:
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise ValueError(f"histogram needs finite lo < hi, got lo={lo}, hi={hi}")
    if not (width > 0 and math.isfinite(width)):
        raise ValueError(f"bin width must be positive, got {width}")
    return max(1, math.ceil((hi - lo) / width - 1e-9))


def _bin_index(x: float, lo: float, hi: float, width: float, nbins: int) -> int:
    """-1 for underflow, ``nbins`` for overflow; the last bin is closed at hi."""
    if x < lo:
        return -1
    if x > hi:
        return nbins
    k = int((x - lo) // width)
    return k if k < nbins else nbins - 1


@dataclass
class Histogram:
    lo: float
    hi: float
    bin_width: float
    counts: list[int] = field(default_factory=list)
    underflow: int = 0
    overflow: int = 0

    def __post_init__(self) -> None:
        nbins = _n_bins(self.lo, self.hi, self.bin_width)
        if not self.counts:
            self.counts = [0] * nbins
        elif len(self.counts) != nbins:
            raise ValueError("counts length does not match the bin layout")

    @property
    def total(self) -> int:
        return sum(self.counts) + self.underflow + self.overflow

    def edges(self, k: int) -> tuple[float, float]:
        left = self.lo + k * self.bin_width
        return left, min(left + self.bin_width, self.hi)

    def add(self, x: float) -> None:
        k = _bin_index(x, self.lo, self.hi, self.bin_width, len(self.counts))
        if k < 0:
            self.underflow += 1
        elif k >= len(self.counts):
            self.overflow += 1
        else:
            self.counts[k] += 1

    def add_many(self, xs) -> None:
        """Vectorised :meth:`add` with identical edge handling."""
        a = np.asarray(xs, dtype=float)
        if a.size == 0:
            return
        nbins = len(self.counts)
        under = a < self.lo
        over = a > self.hi
        inside = a[~(under | over)]
        k = np.floor_divide(inside - self.lo, self.bin_width).astype(np.int64)
        np.minimum(k, nbins - 1, out=k)
        for i, c in enumerate(np.bincount(k, minlength=nbins).tolist()):
            self.counts[i] += c
        self.underflow += int(under.sum())
        self.overflow += int(over.sum())

    def merge(self, other: Histogram) -> Histogram:
        if (self.lo, self.hi, self.bin_width) != (other.lo, other.hi, other.bin_width):
            raise ValueError("cannot merge histograms with different bins")
        return Histogram(
            self.lo,
            self.hi,
            self.bin_width,
            [a + b for a, b in zip(self.counts, other.counts)],
            self.underflow + other.underflow,
            self.overflow + other.overflow,
        )


def histogram(values: Iterable[float], lo: float, hi: float, bin_width: float) -> Histogram:
    h = Histogram(lo, hi, bin_width)
    for v in values:
        h.add(v)
    return h


@dataclass(frozen=True)
class WeightedLinearFit:
    slope: float
    intercept: float
    slope_se: float
    n_points: int


def fit_weighted_line(
    x: Sequence[float], y: Sequence[float], w: Sequence[float]
) -> WeightedLinearFit:
    """Weighted least squares line through (x, y) with weights w.

    The slope SE is the pure inverse-variance value sqrt(1 / Sxx); no
    reduced chi-square rescaling is applied.
    """
    if not (len(x) == len(y) == len(w)):
        raise ValueError("x, y and w must have equal length")
    if len(x) < 2 or len(set(x)) < 2:
        raise ValueError("fit needs at least 2 points with 2 distinct x values")
    if any(not (wi > 0 and math.isfinite(wi)) for wi in w):
        raise ValueError("weights must be positive and finite")
    sw = math.fsum(w)
    xbar = math.fsum(wi * xi for wi, xi in zip(w, x)) / sw
    ybar = math.fsum(wi * yi for wi, yi in zip(w, y)) / sw
    sxx = math.fsum(wi * (xi - xbar) ** 2 for wi, xi in zip(w, x))
    sxy = math.fsum(wi * (xi - xbar) * (yi - ybar) for wi, xi, yi in zip(w, x, y))
    if sxx <= 0.0:
        raise ValueError("x values have no weighted spread")
    slope = sxy / sxx
    return WeightedLinearFit(slope, ybar - slope * xbar, math.sqrt(1.0 / sxx), len(x))


def weighted_least_squares(
    points: Sequence[tuple[float, float, float]], se_floor: float = DEFAULT_SE_FLOOR
) -> WeightedLinearFit:
    """Fit ``y = intercept + slope * x`` with weights 1 / se_y**2.

    Any se_y below ``se_floor`` is raised to it first so a zero-variance
    point cannot take infinite weight.
    """
    xs, ys, ws = [], [], []
    floored = 0
    for x, y, se in points:
        if not se >= se_floor:
            if not se >= 0:
                raise ValueError(f"se_y must be non-negative, got {se}")
            se = se_floor
            floored += 1
        xs.append(x)
        ys.append(y)
        ws.append(1.0 / (se * se))
    if floored:
        log.info("raised %d standard errors to the floor %g", floored, se_floor)
    return fit_weighted_line(xs, ys, ws)


def weighted_rss(fit: WeightedLinearFit, x, y, w) -> float:
    return math.fsum(
        wi * (yi - fit.intercept - fit.slope * xi) ** 2 for xi, yi, wi in zip(x, y, w)
    )


@dataclass(frozen=True)
class MedianBin:
    lo: float
    hi: float
    center: float
    median: float
    count: int


def binned_medians(
    points: Iterable[tuple[float, float]],
    bin_width: float = 5.0,
    lo: float = 0.0,
    hi: float = 100.0,
) -> list[MedianBin]:
    """Median y in x bins over [lo, hi]; empty bins are left out."""
    nbins = _n_bins(lo, hi, bin_width)
    buckets: dict[int, list[float]] = {}
    for x, y in points:
        k = _bin_index(x, lo, hi, bin_width, nbins)
        if 0 <= k < nbins:
            buckets.setdefault(k, []).append(y)
    out = []
    for k in sorted(buckets):
        left = lo + k * bin_width
        right = min(left + bin_width, hi)
        ys = buckets[k]
        out.append(MedianBin(left, right, left + bin_width / 2, statistics.median(ys), len(ys)))
    return out


@dataclass
class DensityGrid:
    x_lo: float
    x_hi: float
    x_width: float
    y_lo: float
    y_hi: float
    y_width: float
    counts: list[list[int]]
    outside: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.counts), len(self.counts[0])

    def x_marginal(self) -> list[int]:
        return [sum(row) for row in self.counts]

    def y_marginal(self) -> list[int]:
        return [sum(col) for col in zip(*self.counts)]


def density_grid(
    points: Iterable[tuple[float, float]],
    x_width: float,
    y_width: float,
    x_range: tuple[float, float] = (0.0, 100.0),
    y_range: tuple[float, float] = (-50.0, 130.0),
) -> DensityGrid:
    """2-D counts with the same edge rules as :func:`histogram`.

    ``counts[i][j]`` is x bin i, y bin j.  Points outside either range are
    tallied in ``outside``.
    """
    nx = _n_bins(*x_range, x_width)
    ny = _n_bins(*y_range, y_width)
    counts = [[0] * ny for _ in range(nx)]
    outside = 0
    for x, y in points:
        i = _bin_index(x, *x_range, x_width, nx)
        j = _bin_index(y, *y_range, y_width, ny)
        if 0 <= i < nx and 0 <= j < ny:
            counts[i][j] += 1
        else:
            outside += 1
    return DensityGrid(*x_range, x_width, *y_range, y_width, counts, outside)
