"""Inter-detection gaps and their histograms."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "DEFAULT_M_MAX",
    "IntervalHistogram",
    "SlidingWindow",
    "extract_intervals",
    "build_histogram",
    "merge",
]

DEFAULT_M_MAX = 10_000


def extract_intervals(stream) -> np.ndarray:
    """Gate gaps between consecutive detections.

    ``stream`` is an :class:`~gatedspad.simulate.EventStream` or any sequence
    of strictly increasing gate indices. Fewer than two detections give an
    empty array.
    """
    gates = np.asarray(getattr(stream, "gates", stream), dtype=np.int64)
    gaps = np.diff(gates)
    if gaps.size and gaps.min() < 1:
        raise ValueError("gate indices must be strictly increasing")
    return gaps


@dataclass
class IntervalHistogram:
    """Counts of gaps ``m = 1..m_max``; longer gaps land in ``overflow``.

    ``counts[m - 1]`` holds the number of gaps of exactly ``m`` gates. Empty
    bins are kept; see :attr:`zero_bins`.
    """

    counts: np.ndarray
    overflow: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1 or self.counts.size < 1:
            raise ValueError("counts must be a non-empty 1-d array")
        if np.any(self.counts < 0) or self.overflow < 0:
            raise ValueError("counts must be non-negative")
        self.overflow = int(self.overflow)

    @classmethod
    def empty(cls, m_max: int = DEFAULT_M_MAX) -> "IntervalHistogram":
        return cls(np.zeros(m_max, dtype=np.int64))

    @property
    def m_max(self) -> int:
        return self.counts.size

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.overflow

    @property
    def gaps(self) -> np.ndarray:
        return np.arange(1, self.m_max + 1)

    @property
    def zero_bins(self) -> np.ndarray:
        return self.counts == 0

    def count(self, m: int) -> int:
        return int(self.counts[m - 1]) if 1 <= m <= self.m_max else 0

    def empirical_pmf(self) -> np.ndarray:
        total = self.total
        if total == 0:
            return np.zeros(self.m_max)
        return self.counts / total

    def pmf_fraction(self, m: int) -> Fraction:
        """Exact empirical probability of a gap of ``m`` gates."""
        return Fraction(self.count(m), self.total)

    def overflow_fraction(self) -> Fraction:
        return Fraction(self.overflow, self.total)

    def copy(self) -> "IntervalHistogram":
        return IntervalHistogram(self.counts.copy(), self.overflow)

    def last_bin_with(self, k_min: int) -> int:
        """Largest ``m`` with at least ``k_min`` counts (0 if none)."""
        idx = np.flatnonzero(self.counts >= k_min)
        return int(idx[-1]) + 1 if idx.size else 0

    def __eq__(self, other):
        if not isinstance(other, IntervalHistogram):
            return NotImplemented
        return self.overflow == other.overflow and np.array_equal(self.counts, other.counts)


def build_histogram(gaps, m_max: int = DEFAULT_M_MAX) -> IntervalHistogram:
    if m_max < 1:
        raise ValueError("m_max must be >= 1")
    gaps = np.asarray(gaps, dtype=np.int64)
    if gaps.size and gaps.min() < 1:
        raise ValueError("gaps must be >= 1")
    inside = gaps[gaps <= m_max]
    counts = np.bincount(inside, minlength=m_max + 1)[1:]
    return IntervalHistogram(counts, int(gaps.size - inside.size))


def merge(a: IntervalHistogram, b: IntervalHistogram) -> IntervalHistogram:
    """Add two histograms bin by bin.

    Merging histograms of two consecutive chunks of a stream loses the gap
    that bridges them; the caller must attribute it (by convention to the
    later chunk) by including the last detection of the earlier chunk.
    """
    if a.m_max != b.m_max:
        raise ValueError(f"m_max mismatch: {a.m_max} != {b.m_max}")
    return IntervalHistogram(a.counts + b.counts, a.overflow + b.overflow)


class SlidingWindow:
    """Histogram of the most recent ``capacity`` gaps, updated in O(1) per gap.

    Only the owning thread may push. Readers take :meth:`snapshot`, which
    returns an independent copy.
    """

    def __init__(self, capacity: int, m_max: int = DEFAULT_M_MAX):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.m_max = int(m_max)
        self._ring = np.zeros(self.capacity, dtype=np.int64)
        self._head = 0  # next write position
        self._size = 0
        self._counts = np.zeros(self.m_max + 1, dtype=np.int64)  # index 0 unused
        self._overflow = 0
        self.pushed = 0

    def __len__(self):
        return self._size

    def _add(self, gap, sign):
        if gap > self.m_max:
            self._overflow += sign
        else:
            self._counts[gap] += sign

    def push(self, gap: int) -> "SlidingWindow":
        gap = int(gap)
        if gap < 1:
            raise ValueError("gap must be >= 1")
        if self._size == self.capacity:
            self._add(int(self._ring[self._head]), -1)
        else:
            self._size += 1
        self._ring[self._head] = gap
        self._add(gap, +1)
        self._head = (self._head + 1) % self.capacity
        self.pushed += 1
        return self

    def extend(self, gaps) -> "SlidingWindow":
        """Push many gaps at once; equivalent to repeated :meth:`push`."""
        gaps = np.asarray(gaps, dtype=np.int64)
        if gaps.size == 0:
            return self
        if gaps.min() < 1:
            raise ValueError("gaps must be >= 1")
        n = gaps.size
        self.pushed += n
        if n >= self.capacity:
            keep = gaps[n - self.capacity:]
            self._ring[:] = keep
            self._head = 0
            self._size = self.capacity
            self._rebuild()
            return self
        evict = max(0, self._size + n - self.capacity)
        if evict:
            start = (self._head - self._size) % self.capacity
            old = self._ring[(start + np.arange(evict)) % self.capacity]
            self._bulk(old, -1)
        pos = (self._head + np.arange(n)) % self.capacity
        self._ring[pos] = gaps
        self._bulk(gaps, +1)
        self._head = (self._head + n) % self.capacity
        self._size = min(self.capacity, self._size + n)
        return self

    def _bulk(self, gaps, sign):
        inside = gaps[gaps <= self.m_max]
        self._counts += sign * np.bincount(inside, minlength=self.m_max + 1)
        self._overflow += sign * int(gaps.size - inside.size)

    def _rebuild(self):
        self._counts[:] = 0
        self._overflow = 0
        self._bulk(self.contents(), +1)

    def contents(self) -> np.ndarray:
        """Gaps currently held, oldest first."""
        start = (self._head - self._size) % self.capacity
        return self._ring[(start + np.arange(self._size)) % self.capacity].copy()

    def snapshot(self) -> IntervalHistogram:
        return IntervalHistogram(self._counts[1:].copy(), self._overflow)

    def recompute(self) -> IntervalHistogram:
        """Histogram rebuilt from scratch over the ring contents."""
        return build_histogram(self.contents(), self.m_max)
