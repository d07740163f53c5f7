"""Homogeneous-region segmentation and contiguity analytics.

A region is a run of consecutive page frames with a single usage, at most
``MAX_REGION_PAGES`` long; longer runs are cut into full-size chunks plus a
remainder.  All analytics here are vectorized over the page array.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .snapshot import PageUsage

MAX_REGION_PAGES = 1024
HUGE_PAGE_PAGES = 512
DEFAULT_MAX_ORDER = 10


class Region(NamedTuple):
    start_pfn: int
    len: int
    usage: PageUsage


@dataclass(frozen=True, eq=False)
class RegionSequence:
    """Column-oriented sequence of regions covering ``[0, total_pages)``."""

    starts: np.ndarray
    lens: np.ndarray
    usages: np.ndarray
    total_pages: int

    def __post_init__(self):
        starts = np.asarray(self.starts, dtype=np.int64)
        lens = np.asarray(self.lens, dtype=np.int64)
        usages = np.asarray(self.usages, dtype=np.uint8)
        if not (starts.shape == lens.shape == usages.shape) or starts.ndim != 1:
            raise ValueError("region columns must be equal-length vectors")
        if lens.size:
            if lens.min() < 1 or lens.max() > MAX_REGION_PAGES:
                raise ValueError(f"region lengths must lie in [1, {MAX_REGION_PAGES}]")
            if starts[0] != 0 or np.any(starts[1:] != starts[:-1] + lens[:-1]):
                raise ValueError("regions must be contiguous from pfn 0")
        if int(lens.sum()) != self.total_pages:
            raise ValueError("region lengths do not add up to total_pages")
        for name, value in (("starts", starts), ("lens", lens), ("usages", usages)):
            value.flags.writeable = False
            object.__setattr__(self, name, value)

    @classmethod
    def from_classes(cls, classes):
        """Build a sequence from ``(size, usage)`` pairs laid end to end."""
        classes = list(classes)
        lens = np.array([int(size) for size, _ in classes], dtype=np.int64)
        usages = np.array([int(usage) for _, usage in classes], dtype=np.uint8)
        starts = np.concatenate(([0], np.cumsum(lens)[:-1])) if lens.size else lens
        return cls(starts, lens, usages, int(lens.sum()))

    def __len__(self):
        return self.lens.size

    def __iter__(self):
        for start, length, usage in zip(self.starts.tolist(), self.lens.tolist(),
                                        self.usages.tolist()):
            yield Region(start, length, PageUsage(usage))

    def __getitem__(self, i):
        return Region(int(self.starts[i]), int(self.lens[i]), PageUsage(int(self.usages[i])))

    def is_canonical(self):
        """True when same-usage neighbours only arise from cap splitting."""
        same = self.usages[1:] == self.usages[:-1]
        return bool(np.all(self.lens[:-1][same] == MAX_REGION_PAGES))

    def expand(self):
        """Page array reproduced from the regions."""
        return np.repeat(self.usages, self.lens)


def _runs(pages):
    """Start offsets and lengths of maximal equal-value runs."""
    n = pages.size
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    starts = np.concatenate(([0], np.flatnonzero(pages[1:] != pages[:-1]) + 1))
    lens = np.diff(np.append(starts, n))
    return starts, lens


def segment(snapshot, max_len=MAX_REGION_PAGES):
    """Cut a snapshot into maximal homogeneous runs capped at ``max_len`` pages."""
    pages = snapshot.pages if hasattr(snapshot, "pages") else np.asarray(snapshot, dtype=np.uint8)
    n = int(pages.size)
    starts, lens = _runs(pages)
    long_runs = np.flatnonzero(lens > max_len)
    if long_runs.size:
        # Extra cut points every max_len pages inside over-long runs.
        chunks = (lens[long_runs] - 1) // max_len
        owner = np.repeat(long_runs, chunks)
        k = np.arange(owner.size) - np.repeat(np.cumsum(chunks) - chunks, chunks) + 1
        starts = np.insert(starts, owner + 1, starts[owner] + k * max_len)
        lens = np.diff(np.append(starts, n))
    return RegionSequence(starts, lens, pages[starts], n)


def size_bucket(length):
    """Largest power of two not exceeding ``length`` (works on arrays too)."""
    length = np.asarray(length, dtype=np.int64)
    return np.left_shift(1, np.floor(np.log2(length)).astype(np.int64))


def homogeneity_histogram(seq, usage=None):
    """Pages per power-of-two region-size bucket.

    A region of ``L`` pages contributes ``L`` pages to bucket
    ``2**floor(log2(L))``.  ``usage`` restricts the count to one usage.
    Buckets with no pages are omitted.
    """
    lens = seq.lens
    if usage is not None:
        lens = lens[seq.usages == int(usage)]
    if lens.size == 0:
        return {}
    buckets = size_bucket(lens)
    keys, inverse = np.unique(buckets, return_inverse=True)
    totals = np.bincount(inverse, weights=lens).astype(np.int64)
    return {int(k): int(v) for k, v in zip(keys, totals)}


def hugepage_feasibility(snapshot, aligned=True, block_pages=HUGE_PAGE_PAGES):
    """Fraction of free memory usable for a huge page.

    With ``aligned`` (the default) a free page counts when its whole
    ``block_pages``-aligned block is free, as a 2 MiB mapping requires.
    Otherwise any free run of at least ``block_pages`` pages counts.
    Returns 0.0 when nothing is free.
    """
    free = snapshot.pages == PageUsage.FREE
    total_free = int(free.sum())
    if total_free == 0:
        return 0.0
    if aligned:
        nblocks = free.size // block_pages
        full = free[: nblocks * block_pages].reshape(nblocks, block_pages).all(axis=1)
        usable = int(full.sum()) * block_pages
    else:
        starts, lens = _runs(free)
        usable = int(lens[free[starts] & (lens >= block_pages)].sum())
    return usable / total_free


def free_block_histogram(snapshot, max_order=DEFAULT_MAX_ORDER):
    """Buddy free-list view of free memory: number of free blocks per order.

    Each free page belongs to exactly one block, the largest naturally
    aligned all-free block of at most ``2**max_order`` pages containing it.
    Every order from 0 to ``max_order`` appears in the result.
    """
    if not 0 <= max_order <= DEFAULT_MAX_ORDER:
        raise ValueError(f"max_order must lie in [0, {DEFAULT_MAX_ORDER}]")
    free = snapshot.pages == PageUsage.FREE
    span = 1 << max_order
    padded = np.zeros(-(-free.size // span) * span, dtype=bool)
    padded[: free.size] = free
    # full[k][i]: aligned block i of order k is entirely free.
    full = [padded]
    for _ in range(max_order):
        prev = full[-1]
        full.append(prev[0::2] & prev[1::2])
    totals = [int(level.sum()) for level in full]
    hist = {}
    for order in range(max_order):
        hist[order] = totals[order] - 2 * totals[order + 1]
    hist[max_order] = totals[max_order]
    return hist


def usage_breakdown(snapshot):
    """Fraction of pages in each of the seven usages."""
    counts = np.bincount(snapshot.pages, minlength=len(PageUsage))
    total = snapshot.pages.size
    return {usage: counts[usage] / total for usage in PageUsage}


def homogeneity_metric(snapshot, min_len=64):
    """Fraction of memory lying in homogeneous runs of at least ``min_len`` pages."""
    _, lens = _runs(snapshot.pages)
    return float(lens[lens >= min_len].sum()) / snapshot.pages.size
