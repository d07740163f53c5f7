"""Reproduction accuracy of a profile on a snapshot.

The accuracy score compares the memory-class distribution ``D`` measured on a
snapshot with the ideal distribution ``S`` implied by the profile's stationary
distribution::

    score = ||S - D|| / ||S||

Zero means a perfect match.  The score exceeds 1 when ``D`` puts most of its
mass on classes that ``S`` does not know; with fully disjoint supports it is
``sqrt(2)`` under L2 and ``2`` under L1.
"""

import math
from typing import NamedTuple

import numpy as np

from .markov import (
    _PROFILE_USAGE_OF, ClassDistribution, MemoryClass, check_profile,
    memory_weighted, profile_regions, region_weighted, solve,
)
from .regions import MAX_REGION_PAGES
from .snapshot import PageUsage

IDEAL_SCORE = 0.1
POOR_SCORE = 0.4

NORMS = ("l2", "l1")


class ClassContribution(NamedTuple):
    cls: MemoryClass
    expected: float
    observed: float
    difference: float


def score_band(score):
    if score <= IDEAL_SCORE:
        return "ideal"
    if score > POOR_SCORE:
        return "poor"
    return "fair"


def _analysed_pages(snapshot, include_reserved):
    if include_reserved or not snapshot.reserved_pages:
        return snapshot.pages
    return snapshot.pages[snapshot.reserved_pages:]


def class_distribution(snapshot, include_reserved=False):
    """Fraction of memory per ``(region size, profile usage)`` class.

    Regions are cut on the profile alphabet (see
    :func:`~memfrag.markov.profile_regions`).  The reserved prefix of a
    synthesized snapshot is left out unless ``include_reserved`` is set.
    """
    pages = _analysed_pages(snapshot, include_reserved)
    if pages.size == 0:
        return ClassDistribution({})
    seq = profile_regions(pages)
    codes = (_PROFILE_USAGE_OF[seq.usages].astype(np.int64) * (MAX_REGION_PAGES + 1)
             + seq.lens)
    keys, inverse = np.unique(codes, return_inverse=True)
    totals = np.bincount(inverse, weights=seq.lens)
    total = float(pages.size)
    return ClassDistribution({
        MemoryClass(int(k % (MAX_REGION_PAGES + 1)),
                    PageUsage(int(k // (MAX_REGION_PAGES + 1)))): float(t) / total
        for k, t in zip(keys, totals)
    })


def ideal_distribution(profile, weighting="memory", solver="power"):
    dist = solve(profile, solver)
    if weighting == "memory":
        return memory_weighted(dist, profile.states)
    if weighting == "regions":
        return region_weighted(dist, profile.states)
    raise ValueError(f"unknown weighting {weighting!r}")


def _sort_key(cls):
    return (int(cls.usage), cls.size)


def _norm(values, norm):
    if norm == "l2":
        return math.sqrt(math.fsum(v * v for v in values))
    if norm == "l1":
        return math.fsum(abs(v) for v in values)
    raise ValueError(f"unknown norm {norm!r}")


def contributions(expected, observed):
    """Per-class rows over the union support, largest |difference| first."""
    support = sorted(set(expected.weights) | set(observed.weights), key=_sort_key)
    rows = [
        ClassContribution(cls, expected.get(cls), observed.get(cls),
                          expected.get(cls) - observed.get(cls))
        for cls in support
    ]
    rows.sort(key=lambda row: (-abs(row.difference), _sort_key(row.cls)))
    return rows


def distribution_score(expected, observed, norm="l2"):
    """``||expected - observed|| / ||expected||`` over the union support."""
    rows = contributions(expected, observed)
    scale = _norm([row.expected for row in rows], norm)
    return _norm([row.difference for row in rows], norm) / scale


def accuracy_score(profile, snapshot, norm="l2", include_reserved=False,
                   weighting="memory", solver="power"):
    """Accuracy score of ``snapshot`` against ``profile``; lower is better."""
    check_profile(profile)
    expected = ideal_distribution(profile, weighting, solver)
    if weighting == "regions":
        observed = _region_counts(snapshot, include_reserved)
    else:
        observed = class_distribution(snapshot, include_reserved)
    return distribution_score(expected, observed, norm)


def _region_counts(snapshot, include_reserved):
    # Fraction of regions (not memory) per class.
    pages = _analysed_pages(snapshot, include_reserved)
    seq = profile_regions(pages)
    codes = (_PROFILE_USAGE_OF[seq.usages].astype(np.int64) * (MAX_REGION_PAGES + 1)
             + seq.lens)
    keys, counts = np.unique(codes, return_counts=True)
    return ClassDistribution({
        MemoryClass(int(k % (MAX_REGION_PAGES + 1)),
                    PageUsage(int(k // (MAX_REGION_PAGES + 1)))): c / len(seq)
        for k, c in zip(keys, counts)
    })


def score_report(profile, snapshot, include_reserved=False, solver="power"):
    """Per-class ``(expected, observed, difference)`` table.

    The root-sum-square of the differences is the numerator of the L2 score.
    """
    check_profile(profile)
    expected = ideal_distribution(profile, "memory", solver)
    observed = class_distribution(snapshot, include_reserved)
    return contributions(expected, observed)
