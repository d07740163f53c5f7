"""Markov-process fragmentation profiles.

A profile describes how homogeneous memory regions follow one another along
the physical address space.  Its states are memory classes, ``(size, usage)``
pairs, and its transition matrix gives the probability that a region of one
class is immediately followed by a region of another.

:func:`build_profile` derives a profile from a region sequence and cleans it
up so that the result is an irreducible chain, which in turn guarantees a
unique stationary distribution.
"""

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import (
    ConvergenceError, DegenerateProfileError, InsufficientDataError,
    InvalidProfileError, ProfileFileError,
)
from .regions import MAX_REGION_PAGES, RegionSequence, segment
from .snapshot import PageUsage, Snapshot

PROFILE_VERSION = 1
DEFAULT_THRESHOLD = 1e-4
DEFAULT_EPSILON = 0.1

PROFILE_USAGES = (
    PageUsage.FREE, PageUsage.FILE_CACHE, PageUsage.ANON,
    PageUsage.ANON_HUGE, PageUsage.PINNED,
)

USAGE_TAGS = {
    PageUsage.FREE: "free",
    PageUsage.FILE_CACHE: "file",
    PageUsage.ANON: "anon",
    PageUsage.ANON_HUGE: "anonhp",
    PageUsage.PINNED: "pinned",
}
TAG_USAGES = {tag: usage for usage, tag in USAGE_TAGS.items()}

# Seven-way page usage -> five-way profile usage, as a lookup table.
_PROFILE_USAGE_OF = np.array(
    [PageUsage.FREE, PageUsage.FILE_CACHE, PageUsage.ANON, PageUsage.ANON_HUGE,
     PageUsage.PINNED, PageUsage.PINNED, PageUsage.PINNED],
    dtype=np.uint8,
)


def to_profile_usage(usage):
    """Collapse a page usage onto the profile alphabet (Slab, Other -> Pinned)."""
    return PageUsage(int(_PROFILE_USAGE_OF[int(usage)]))


def profile_regions(snapshot):
    """Segment a snapshot after collapsing its pages onto the profile alphabet.

    Adjacent Slab, Other and Pinned pages thus form a single pinned region,
    exactly as a synthesized layout would lay them out.
    """
    pages = snapshot.pages if isinstance(snapshot, Snapshot) else np.asarray(snapshot)
    return segment(_PROFILE_USAGE_OF[pages])


class MemoryClass(NamedTuple):
    size: int
    usage: PageUsage

    def __str__(self):
        return f"{self.size}:{USAGE_TAGS.get(self.usage, self.usage.name.lower())}"


@dataclass(frozen=True, eq=False)
class Profile:
    """States plus a sparse row-stochastic transition matrix.

    ``matrix[i, j]`` is the probability that a region of class
    ``states[i]`` is followed by one of class ``states[j]``.
    """

    states: tuple
    matrix: sp.csr_matrix
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        states = tuple(MemoryClass(int(s), PageUsage(int(u))) for s, u in self.states)
        if not states:
            raise InvalidProfileError("a profile needs at least one state")
        if len(set(states)) != len(states):
            raise InvalidProfileError("profile states must be distinct")
        for cls in states:
            if not 1 <= cls.size <= MAX_REGION_PAGES or cls.usage not in USAGE_TAGS:
                raise InvalidProfileError(f"invalid memory class {cls!r}")
        matrix = sp.csr_matrix(self.matrix, dtype=np.float64)
        if matrix.shape != (len(states), len(states)):
            raise InvalidProfileError("transition matrix shape does not match states")
        matrix.eliminate_zeros()
        matrix.sort_indices()
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "meta", dict(self.meta))

    @classmethod
    def from_dense(cls, states, matrix, meta=None):
        return cls(tuple(states), sp.csr_matrix(np.asarray(matrix, dtype=np.float64)),
                   meta or {})

    def __len__(self):
        return len(self.states)

    @property
    def sizes(self):
        return np.array([s.size for s in self.states], dtype=np.float64)

    def dense(self):
        return self.matrix.toarray()

    def edges(self):
        """``(from, to, probability)`` triples in row-major order."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return [(int(coo.row[k]), int(coo.col[k]), float(coo.data[k])) for k in order]


@dataclass(frozen=True)
class StationaryDistribution:
    probs: np.ndarray
    method: str = ""
    iterations: int = 0
    residual: float = 0.0


@dataclass(frozen=True)
class ClassDistribution:
    """Fraction of memory per :class:`MemoryClass`."""

    weights: dict

    def total(self):
        return math.fsum(self.weights.values())

    def get(self, cls):
        return self.weights.get(cls, 0.0)


# ---------------------------------------------------------------------------
# counting


def _class_codes(seq):
    """Integer code per region, ``usage * (MAX + 1) + size`` on profile usages."""
    if isinstance(seq, RegionSequence):
        sizes, usages = seq.lens, seq.usages
    else:
        pairs = list(seq)
        sizes = np.array([int(s) for s, _ in pairs], dtype=np.int64)
        usages = np.array([int(u) for _, u in pairs], dtype=np.uint8)
    if sizes.size and (sizes.min() < 1 or sizes.max() > MAX_REGION_PAGES):
        raise InsufficientDataError(f"region sizes must lie in [1, {MAX_REGION_PAGES}]")
    profile_usages = _PROFILE_USAGE_OF[usages].astype(np.int64)
    return profile_usages * (MAX_REGION_PAGES + 1) + sizes


def count_transitions(seq):
    """Exact counts of adjacent region pairs.

    Returns ``(states, counts)``: states in order of first appearance and an
    integer CSR matrix with ``counts[i, j]`` = number of times a region of
    class ``states[i]`` is immediately followed by one of ``states[j]``.
    """
    return _count_codes(_class_codes(seq))


def _count_codes(codes):
    if codes.size < 2:
        raise InsufficientDataError("need at least two regions to count transitions")
    uniq, first, inverse = np.unique(codes, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    idx = rank[inverse]
    n = uniq.size
    pairs, counts = np.unique(idx[:-1] * n + idx[1:], return_counts=True)
    matrix = sp.csr_matrix(
        (counts.astype(np.int64), (pairs // n, pairs % n)), shape=(n, n), dtype=np.int64
    )
    states = tuple(
        MemoryClass(int(code % (MAX_REGION_PAGES + 1)),
                    PageUsage(int(code // (MAX_REGION_PAGES + 1))))
        for code in uniq[order]
    )
    return states, matrix


def normalize_rows(matrix):
    """Scale each non-empty row to sum to one; empty rows stay empty."""
    matrix = sp.csr_matrix(matrix, dtype=np.float64, copy=True)
    matrix.sum_duplicates()
    sums = np.asarray(matrix.sum(axis=1)).ravel()
    row_of = np.repeat(sums, np.diff(matrix.indptr))
    matrix.data = matrix.data / row_of
    matrix.eliminate_zeros()
    return matrix


def transition_probabilities(counts):
    return normalize_rows(counts)


# ---------------------------------------------------------------------------
# cleanup


def _submatrix(matrix, keep):
    keep = np.asarray(keep)
    return sp.csr_matrix(matrix[keep][:, keep])


def strong_components(matrix):
    """SCC labels and a per-component flag telling whether it is closed.

    A component is closed when no positive-probability edge leaves it, i.e.
    it is a sink of the condensation.  States in open components are
    transient.
    """
    ncomp, labels = connected_components(matrix, directed=True, connection="strong")
    coo = sp.coo_matrix(matrix)
    mask = coo.data > 0
    leaving = labels[coo.row[mask]] != labels[coo.col[mask]]
    closed = np.ones(ncomp, dtype=bool)
    closed[labels[coo.row[mask][leaving]]] = False
    return labels, closed


def _drop_dead_rows(states, matrix):
    # Removing a state can empty the row of a state that only led to it.
    while True:
        sums = np.asarray(matrix.sum(axis=1)).ravel()
        alive = sums > 0
        if alive.all():
            return states, matrix
        keep = np.flatnonzero(alive)
        if keep.size == 0:
            return (), sp.csr_matrix((0, 0))
        states = tuple(states[i] for i in keep)
        matrix = normalize_rows(_submatrix(matrix, keep))


def _component_representative(matrix, members, mode, rng):
    if mode == "random":
        return int(members[rng.integers(members.size)])
    sub = _submatrix(matrix, members)
    probs = _solve_stationary(sub.toarray())
    return int(members[int(np.argmax(probs))])


def cleanup(states, probs, threshold=DEFAULT_THRESHOLD, epsilon=DEFAULT_EPSILON,
            reconnect="mass", seed=None):
    """Prune, drop transient states, reconnect closed components, renormalize.

    Returns ``(states, matrix, stats)``.  ``reconnect`` selects how the
    endpoint of each bridging edge is picked inside a closed component:
    ``"mass"`` takes the state with the largest stationary mass within the
    component, ``"random"`` draws one uniformly with ``seed``.
    """
    if not 0 <= threshold < 1:
        raise ValueError("threshold must lie in [0, 1)")
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    if reconnect not in ("mass", "random"):
        raise ValueError(f"unknown reconnect mode {reconnect!r}")
    stats = {"input_states": len(states)}

    matrix = sp.csr_matrix(probs, dtype=np.float64, copy=True)
    pruned = matrix.data < threshold
    stats["pruned_edges"] = int(np.count_nonzero(pruned & (matrix.data > 0)))
    matrix.data[pruned] = 0.0
    matrix.eliminate_zeros()
    matrix = normalize_rows(matrix)

    states, matrix = _drop_dead_rows(tuple(states), matrix)
    stats["dead_states"] = stats["input_states"] - len(states)
    if not states:
        raise DegenerateProfileError("every state was pruned away")

    labels, closed = strong_components(matrix)
    keep = np.flatnonzero(closed[labels])
    stats["transient_states"] = len(states) - keep.size
    states = tuple(states[i] for i in keep)
    matrix = _submatrix(matrix, keep)
    labels = labels[keep]

    # Components in order of their first state, so bridging is deterministic.
    _, first = np.unique(labels, return_index=True)
    comp_labels = labels[np.sort(first)]
    stats["closed_components"] = int(comp_labels.size)
    if comp_labels.size > 1:
        rng = np.random.default_rng(seed) if reconnect == "random" else None
        reps = [
            _component_representative(matrix, np.flatnonzero(labels == lab), reconnect, rng)
            for lab in comp_labels
        ]
        rows, cols = [], []
        for a in range(len(reps)):
            for b in range(a + 1, len(reps)):
                rows += [reps[a], reps[b]]
                cols += [reps[b], reps[a]]
        bridges = sp.csr_matrix((np.full(len(rows), epsilon), (rows, cols)),
                                shape=matrix.shape)
        matrix = sp.csr_matrix(matrix + bridges)
    matrix = normalize_rows(matrix)
    return states, matrix, stats


def build_profile(seq, threshold=DEFAULT_THRESHOLD, epsilon=DEFAULT_EPSILON,
                  reconnect="mass", seed=None, source="", timestamp=None):
    """Derive a cleaned, irreducible profile from a region sequence.

    Parameters
    ----------
    seq : Snapshot, RegionSequence or iterable of (size, usage)
        Regions in address order.  Usages are collapsed with
        :func:`to_profile_usage` before counting.  A snapshot is segmented
        with :func:`profile_regions`.
    threshold : float
        Edges with probability below this are pruned.
    epsilon : float
        Weight of the bridging edges added between closed components
        before the final renormalization.
    reconnect : {"mass", "random"}
        Bridging endpoint selection, see :func:`cleanup`.
    seed : int, optional
        Seed for ``reconnect="random"``.
    """
    if isinstance(seq, Snapshot):
        seq = profile_regions(seq)
    codes = _class_codes(seq)
    states, counts = _count_codes(codes)
    probs = transition_probabilities(counts)
    states, matrix, stats = cleanup(states, probs, threshold, epsilon, reconnect, seed)
    meta = {
        "source": source,
        "timestamp": timestamp,
        "threshold": threshold,
        "epsilon": epsilon,
        "reconnect": reconnect,
        "seed": seed if reconnect == "random" else None,
        "regions": int(codes.size),
        "cleanup": stats,
    }
    return Profile(states, matrix, meta)


def check_profile(profile, tol=1e-9):
    """Raise :class:`InvalidProfileError` unless the profile is a valid chain."""
    data = profile.matrix.data
    if data.size and (data.min() < 0 or data.max() > 1 + tol):
        raise InvalidProfileError("transition probabilities must lie in [0, 1]")
    sums = np.asarray(profile.matrix.sum(axis=1)).ravel()
    worst = float(np.max(np.abs(sums - 1.0)))
    if worst > tol:
        raise InvalidProfileError(f"rows are not stochastic (worst deviation {worst:.3e})")
    ncomp, _ = connected_components(profile.matrix, directed=True, connection="strong")
    if ncomp != 1:
        raise InvalidProfileError(f"profile is not strongly connected ({ncomp} components)")


# ---------------------------------------------------------------------------
# stationary distributions


def _residual(matrix, probs):
    return float(np.max(np.abs(matrix.T @ probs - probs)))


def stationary(profile, tol=1e-13, max_iter=1_000_000):
    """Stationary distribution by power iteration.

    Iterates ``x <- x @ (I + P) / 2`` from the uniform vector.  The lazy
    chain has the same fixed point as ``P`` but is aperiodic, so periodic
    profiles converge too.  Stops once the largest component change drops
    below ``tol``.
    """
    n = len(profile)
    transposed = sp.csr_matrix(profile.matrix.T)
    x = np.full(n, 1.0 / n)
    change = math.inf
    for iteration in range(1, max_iter + 1):
        nxt = 0.5 * (x + transposed @ x)
        nxt /= nxt.sum()
        change = float(np.max(np.abs(nxt - x)))
        x = nxt
        if change < tol:
            return StationaryDistribution(x, "power", iteration, _residual(profile.matrix, x))
    raise ConvergenceError(max_iter, change)


def _solve_stationary(dense):
    n = dense.shape[0]
    system = dense.T - np.eye(n)
    system[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        probs = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise InvalidProfileError(f"stationary system is singular: {exc}") from None
    if not np.all(np.isfinite(probs)) or probs.min() < -1e-9:
        raise InvalidProfileError("stationary system has no valid probability solution")
    probs = np.clip(probs, 0.0, None)
    probs /= probs.sum()
    if np.max(np.abs(dense.T @ probs - probs)) > 1e-8:
        raise InvalidProfileError("stationary system is singular (chain is reducible)")
    return probs


def stationary_direct(profile):
    """Stationary distribution from a dense linear solve of ``pi (P - I) = 0``."""
    probs = _solve_stationary(profile.dense())
    return StationaryDistribution(probs, "direct", 0, _residual(profile.matrix, probs))


def solve(profile, solver="power"):
    if solver == "power":
        return stationary(profile)
    if solver == "direct":
        return stationary_direct(profile)
    raise ValueError(f"unknown solver {solver!r}")


def memory_weighted(dist, states):
    """Turn region-count probabilities into fractions of memory per class."""
    probs = dist.probs if isinstance(dist, StationaryDistribution) else np.asarray(dist)
    if len(probs) != len(states):
        raise ValueError("distribution and states are not aligned")
    mass = np.array([s.size for s in states], dtype=np.float64) * probs
    mass /= math.fsum(mass)
    return ClassDistribution({MemoryClass(*s): float(w) for s, w in zip(states, mass)})


def region_weighted(dist, states):
    """Region-count probabilities as a :class:`ClassDistribution`, unweighted."""
    probs = dist.probs if isinstance(dist, StationaryDistribution) else np.asarray(dist)
    return ClassDistribution({MemoryClass(*s): float(p) for s, p in zip(states, probs)})


# ---------------------------------------------------------------------------
# serialization


def _format_probability(p):
    return "%.16e" % p


def save_profile(profile):
    """Serialize a profile as canonical UTF-8 JSON bytes.

    Keys are sorted, edges are emitted in row-major order and probabilities
    carry 17 significant digits, so equal profiles produce identical bytes.
    """
    states = ",\n".join(
        '    {"size": %d, "usage": "%s"}' % (s.size, USAGE_TAGS[s.usage])
        for s in profile.states
    )
    edges = ",\n".join(
        '    {"from": %d, "p": %s, "to": %d}' % (i, _format_probability(p), j)
        for i, j, p in profile.edges()
    )
    meta = json.dumps(profile.meta, sort_keys=True, allow_nan=False)
    text = (
        "{\n"
        f'  "edges": [\n{edges}\n  ],\n'
        f'  "meta": {meta},\n'
        f'  "states": [\n{states}\n  ],\n'
        f'  "version": {PROFILE_VERSION}\n'
        "}\n"
    )
    return text.encode("utf-8")


def load_profile(data, row_tol=1e-6):
    """Parse bytes written by :func:`save_profile`, validating the schema."""
    try:
        doc = json.loads(data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProfileFileError(f"profile is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ProfileFileError("profile document must be an object")
    if doc.get("version") != PROFILE_VERSION:
        raise ProfileFileError(f"unsupported profile version {doc.get('version')!r}")
    raw_states = doc.get("states")
    raw_edges = doc.get("edges")
    meta = doc.get("meta", {})
    if not isinstance(raw_states, list) or not raw_states:
        raise ProfileFileError("profile needs a non-empty states array")
    if not isinstance(raw_edges, list):
        raise ProfileFileError("profile needs an edges array")
    if not isinstance(meta, dict):
        raise ProfileFileError("profile meta must be an object")

    states = []
    for k, entry in enumerate(raw_states):
        if not isinstance(entry, dict) or set(entry) != {"size", "usage"}:
            raise ProfileFileError(f"state {k} must have exactly size and usage")
        size, tag = entry["size"], entry["usage"]
        if isinstance(size, bool) or not isinstance(size, int) \
                or not 1 <= size <= MAX_REGION_PAGES:
            raise ProfileFileError(f"state {k} has invalid size {size!r}")
        if tag not in TAG_USAGES:
            raise ProfileFileError(f"state {k} has unknown usage tag {tag!r}")
        states.append(MemoryClass(size, TAG_USAGES[tag]))
    if len(set(states)) != len(states):
        raise ProfileFileError("profile states must be distinct")

    n = len(states)
    rows, cols, vals = [], [], []
    seen = set()
    for k, entry in enumerate(raw_edges):
        if not isinstance(entry, dict) or set(entry) != {"from", "to", "p"}:
            raise ProfileFileError(f"edge {k} must have exactly from, to and p")
        i, j, p = entry["from"], entry["to"], entry["p"]
        for name, idx in (("from", i), ("to", j)):
            if isinstance(idx, bool) or not isinstance(idx, int) or not 0 <= idx < n:
                raise ProfileFileError(f"edge {k} has invalid {name} index {idx!r}")
        if isinstance(p, bool) or not isinstance(p, (int, float)) \
                or not math.isfinite(p) or not 0 <= p <= 1:
            raise ProfileFileError(f"edge {k} has invalid probability {p!r}")
        if (i, j) in seen:
            raise ProfileFileError(f"edge {k} duplicates {i}->{j}")
        seen.add((i, j))
        rows.append(i)
        cols.append(j)
        vals.append(float(p))
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(n, n), dtype=np.float64)
    sums = np.asarray(matrix.sum(axis=1)).ravel()
    bad = np.flatnonzero(np.abs(sums - 1.0) >= row_tol)
    if bad.size:
        k = int(bad[0])
        raise ProfileFileError(f"row {k} sums to {sums[k]!r}, expected 1")
    return Profile(tuple(states), matrix, meta)
