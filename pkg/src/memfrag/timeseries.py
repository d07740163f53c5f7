"""Change-over-time analytics across a series of snapshots."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCorrelationError, SeriesError


@dataclass(frozen=True)
class SnapshotSeries:
    snapshots: tuple
    timestamps: tuple

    def __post_init__(self):
        snapshots = tuple(self.snapshots)
        timestamps = tuple(float(t) for t in self.timestamps)
        if len(snapshots) != len(timestamps):
            raise SeriesError("one timestamp is required per snapshot")
        if len({len(s) for s in snapshots}) > 1:
            raise SeriesError("snapshots in a series must have equal page counts")
        if any(b <= a for a, b in zip(timestamps, timestamps[1:])):
            raise SeriesError("timestamps must be strictly increasing")
        object.__setattr__(self, "snapshots", snapshots)
        object.__setattr__(self, "timestamps", timestamps)

    @classmethod
    def from_snapshots(cls, snapshots):
        """Series ordered by the snapshots' own timestamps."""
        if any(s.timestamp is None for s in snapshots):
            raise SeriesError("every snapshot needs a timestamp")
        ordered = sorted(snapshots, key=lambda s: s.timestamp)
        return cls(tuple(ordered), tuple(s.timestamp for s in ordered))

    def __len__(self):
        return len(self.snapshots)

    @property
    def npages(self):
        return len(self.snapshots[0])

    def stack(self):
        return np.stack([s.pages for s in self.snapshots])


def _require_pairs(series):
    if len(series) < 2:
        raise SeriesError("at least two snapshots are needed")


def change_counts(series):
    """Per page frame, the number of consecutive snapshot pairs that differ."""
    _require_pairs(series)
    stack = series.stack()
    return np.count_nonzero(stack[1:] != stack[:-1], axis=0)


def change_times(series, frame):
    """Timestamps of the later snapshot of each pair in which ``frame`` changed."""
    _require_pairs(series)
    if not 0 <= frame < series.npages:
        raise IndexError(f"frame {frame} outside [0, {series.npages})")
    usage = np.array([s.pages[frame] for s in series.snapshots])
    changed = np.flatnonzero(usage[1:] != usage[:-1]) + 1
    return np.asarray(series.timestamps)[changed]


def skewness(values, bias=True):
    """Sample skewness ``m3 / m2**1.5``, or None if undefined.

    Undefined means fewer than three values or zero variance.  With
    ``bias=False`` the adjusted Fisher-Pearson estimator
    ``g1 * sqrt(n (n - 1)) / (n - 2)`` is returned instead.
    """
    x = np.asarray(values, dtype=np.float64)
    n = x.size
    if n < 3:
        return None
    dev = x - x.mean()
    m2 = float(np.mean(dev ** 2))
    if m2 <= 0.0 or m2 <= (np.finfo(float).eps * float(np.abs(x).max())) ** 2:
        return None
    g1 = float(np.mean(dev ** 3)) / m2 ** 1.5
    if not bias:
        g1 *= math.sqrt(n * (n - 1)) / (n - 2)
    return g1


def interchange_gaps(series, frame):
    return np.diff(change_times(series, frame))


def interchange_skewness(series, frame, bias=True):
    """Skewness of the time gaps between successive usage changes of a frame."""
    return skewness(interchange_gaps(series, frame), bias)


def pooled_interchange_skewness(series, bias=True):
    """Skewness of inter-change gaps pooled over every frame of the series."""
    _require_pairs(series)
    stack = series.stack()
    times = np.asarray(series.timestamps)
    changed = stack[1:] != stack[:-1]
    gaps = []
    for frame in np.flatnonzero(changed.sum(axis=0) >= 2):
        gaps.append(np.diff(times[1:][changed[:, frame]]))
    if not gaps:
        return None
    return skewness(np.concatenate(gaps), bias)


def free_homogeneity_correlation(points):
    """Pearson ``(r, r**2)`` between free-memory fraction and homogeneity.

    ``points`` holds ``(free_fraction, homogeneity)`` pairs, at least three,
    with neither coordinate constant.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise DegenerateCorrelationError("need at least three (x, y) points")
    x = pts[:, 0] - pts[:, 0].mean()
    y = pts[:, 1] - pts[:, 1].mean()
    sxx = float(np.dot(x, x))
    syy = float(np.dot(y, y))
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateCorrelationError("correlation is undefined for a constant coordinate")
    r = float(np.dot(x, y)) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    return r, r * r
