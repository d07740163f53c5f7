"""Artificial fragmentation by random walk over a profile.

:func:`synthesize` lays regions out across a simulated physical address
space by walking the profile's Markov chain, and :func:`shrink` models a
reclaim shrinker handing pages back to the system.

Randomness comes from :class:`PageRng`, which only uses the raw 64-bit output
of NumPy's PCG64 bit generator.  The PCG64 stream for a given seed is stable
across NumPy releases; every derived quantity (uniform doubles, shuffles,
state choices) is computed here, so pinned outputs do not depend on NumPy's
higher-level sampling routines.
"""

import base64
import hashlib
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigurationError, InputError
from .markov import save_profile, stationary
from .snapshot import PageUsage, Snapshot

LAYOUT_VERSION = 1
RNG_ALGORITHM = "pcg64"

LIST_USAGES = (PageUsage.FILE_CACHE, PageUsage.ANON, PageUsage.ANON_HUGE, PageUsage.PINNED)
LIST_TAGS = {
    PageUsage.FILE_CACHE: "file",
    PageUsage.ANON: "anon",
    PageUsage.ANON_HUGE: "anonhp",
    PageUsage.PINNED: "pinned",
}

_DOUBLE_SCALE = 2.0 ** -53
_BATCH = 1 << 16


class PageRng:
    """Seeded generator built on the raw PCG64 stream."""

    def __init__(self, seed):
        self.seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
        self._bits = np.random.PCG64(self.seed)

    def raw(self, n):
        return self._bits.random_raw(n).astype(np.uint64)

    def uniforms(self, n):
        """``n`` doubles in ``[0, 1)`` with 53 random bits each."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * _DOUBLE_SCALE

    def uniform(self):
        return float(self.uniforms(1)[0])

    def index(self, n):
        return min(int(self.uniform() * n), n - 1)

    def permutation(self, n):
        # Ordering by independent 64-bit keys; a stable sort settles the
        # (astronomically rare) ties deterministically.
        return np.argsort(self.raw(n), kind="stable")

    def shuffle(self, array):
        return array[self.permutation(array.size)]


def derive_seed(seed, *labels):
    """Stable 64-bit sub-seed of ``seed`` for the given labels."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed).to_bytes(8, "little", signed=False))
    for label in labels:
        h.update(b"\x00" + str(label).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


class StartMode(str, Enum):
    FIRST = "first"
    RANDOM = "random"
    STATIONARY = "stationary"


@dataclass(frozen=True)
class WalkConfig:
    total_pages: int
    seed: int
    start_mode: StartMode = StartMode.STATIONARY
    reserved_fraction: float = 0.0

    def __post_init__(self):
        if self.total_pages < 1:
            raise ConfigurationError("total_pages must be at least 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        if not 0.0 <= self.reserved_fraction < 1.0:
            raise ConfigurationError("reserved_fraction must lie in [0, 1)")
        object.__setattr__(self, "start_mode", StartMode(self.start_mode))

    @property
    def reserved_pages(self):
        return math.floor(self.reserved_fraction * self.total_pages)


@dataclass
class SynthLayout:
    """A simulated physical address space.

    ``lists`` holds, per non-free usage, the page frames still owned by the
    fragmenter in release order (head first).  ``free_pool`` counts pages that
    are free, either because the walk produced free regions or because the
    shrinker released them.  The first ``reserved_pages`` frames are
    boot-time memory that is never handed out.
    """

    pages: np.ndarray
    lists: dict
    free_pool: int
    reserved_pages: int
    meta: dict = field(default_factory=dict)

    @property
    def total_pages(self):
        return int(self.pages.size)

    def accounted_pages(self):
        return sum(int(v.size) for v in self.lists.values()) + self.free_pool + self.reserved_pages

    def check_conservation(self):
        if self.accounted_pages() != self.total_pages:
            raise AssertionError(
                f"layout accounts for {self.accounted_pages()} of {self.total_pages} pages"
            )


@dataclass(frozen=True)
class ShrinkResult:
    released: np.ndarray
    shortfall: int

    @property
    def satisfied(self):
        return self.shortfall == 0


def profile_digest(profile):
    return hashlib.sha256(save_profile(profile)).hexdigest()


def _start_state(profile, mode, rng):
    n = len(profile)
    if mode is StartMode.FIRST:
        return 0
    if mode is StartMode.RANDOM:
        return rng.index(n)
    probs = stationary(profile).probs
    cum = np.cumsum(probs)
    return min(int(np.searchsorted(cum, rng.uniform() * cum[-1], side="right")), n - 1)


def random_walk(profile, npages, start, rng):
    """Visit states until their sizes cover ``npages``; returns state indices."""
    matrix = profile.matrix
    succ = [matrix.indices[matrix.indptr[i]:matrix.indptr[i + 1]].tolist()
            for i in range(len(profile))]
    cums = [np.cumsum(matrix.data[matrix.indptr[i]:matrix.indptr[i + 1]]).tolist()
            for i in range(len(profile))]
    sizes = [s.size for s in profile.states]
    visits = []
    remaining = npages
    state = start
    draws = []
    pos = 0
    while True:
        visits.append(state)
        remaining -= sizes[state]
        if remaining <= 0:
            return visits
        if pos == len(draws):
            draws = rng.uniforms(_BATCH).tolist()
            pos = 0
        u = draws[pos]
        pos += 1
        cum = cums[state]
        k = bisect_right(cum, u * cum[-1])
        state = succ[state][k if k < len(cum) else len(cum) - 1]


def _walk_pages(profile, npages, mode, rng):
    if npages == 0:
        return np.zeros(0, dtype=np.uint8), 0
    start = _start_state(profile, mode, rng)
    visits = np.array(random_walk(profile, npages, start, rng), dtype=np.int64)
    sizes = np.array([s.size for s in profile.states], dtype=np.int64)[visits]
    usages = np.array([int(s.usage) for s in profile.states], dtype=np.uint8)[visits]
    sizes[-1] -= int(sizes.sum()) - npages
    return np.repeat(usages, sizes), int(visits.size)


def _build_lists(pages, reserved, rng):
    body = pages[reserved:]
    lists = {}
    for usage in LIST_USAGES:
        frames = np.flatnonzero(body == usage).astype(np.int64) + reserved
        lists[usage] = rng.shuffle(frames)
    free_pool = int(np.count_nonzero(body == PageUsage.FREE))
    return lists, free_pool


def synthesize(profile, config):
    """Fragment a simulated address space according to ``profile``.

    The bottom ``floor(reserved_fraction * total_pages)`` frames are marked
    Pinned and left alone.  The rest is covered by a random walk: each visited
    state ``(size, usage)`` claims the next ``size`` frames (the final region
    is truncated to fit), then a successor is drawn from the state's row.
    Finally each per-usage list is shuffled.  Equal inputs give identical
    layouts.
    """
    rng = PageRng(config.seed)
    reserved = config.reserved_pages
    walk, steps = _walk_pages(profile, config.total_pages - reserved, config.start_mode, rng)
    pages = np.empty(config.total_pages, dtype=np.uint8)
    pages[:reserved] = PageUsage.PINNED
    pages[reserved:] = walk
    lists, free_pool = _build_lists(pages, reserved, rng)
    meta = {
        "seed": config.seed,
        "rng": RNG_ALGORITHM,
        "start_mode": config.start_mode.value,
        "reserved_fraction": config.reserved_fraction,
        "walk_steps": steps,
        "profiles": [{"source": profile.meta.get("source", ""),
                      "digest": profile_digest(profile), "fraction": 1.0}],
    }
    return SynthLayout(pages, lists, free_pool, reserved, meta)


def partition_sizes(fractions, total):
    """Whole-page partition sizes by largest-remainder rounding.

    Ties in the fractional part go to the earlier partition.
    """
    quotas = [f * total for f in fractions]
    sizes = [math.floor(q) for q in quotas]
    leftover = total - sum(sizes)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[:leftover]:
        sizes[i] += 1
    return sizes


def synthesize_partitioned(profiles, config):
    """Synthesize contiguous partitions, each driven by its own profile.

    ``profiles`` is an ordered list of ``(profile, fraction)``.  The
    non-reserved address space is split by fraction, each partition gets a
    walk seeded from ``config.seed`` and its index, and the per-usage lists
    of all partitions are merged and shuffled together.
    """
    profiles = list(profiles)
    if not profiles:
        raise ConfigurationError("at least one partition is required")
    fractions = [float(f) for _, f in profiles]
    if any(f <= 0 for f in fractions) or abs(math.fsum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(f"partition fractions {fractions} must be positive and sum to 1")
    if len(profiles) == 1:
        return synthesize(profiles[0][0], config)

    reserved = config.reserved_pages
    sizes = partition_sizes(fractions, config.total_pages - reserved)
    pages = np.empty(config.total_pages, dtype=np.uint8)
    pages[:reserved] = PageUsage.PINNED
    offset = reserved
    steps = []
    refs = []
    for k, ((profile, fraction), size) in enumerate(zip(profiles, sizes)):
        rng = PageRng(derive_seed(config.seed, "partition", k))
        walk, nsteps = _walk_pages(profile, size, config.start_mode, rng)
        pages[offset:offset + size] = walk
        offset += size
        steps.append(nsteps)
        refs.append({"source": profile.meta.get("source", ""),
                     "digest": profile_digest(profile), "fraction": fraction,
                     "pages": size})
    lists, free_pool = _build_lists(pages, reserved, PageRng(config.seed))
    meta = {
        "seed": config.seed,
        "rng": RNG_ALGORITHM,
        "start_mode": config.start_mode.value,
        "reserved_fraction": config.reserved_fraction,
        "walk_steps": sum(steps),
        "profiles": refs,
    }
    return SynthLayout(pages, lists, free_pool, reserved, meta)


def shrink(layout, demand, seed):
    """Release up to ``demand`` pages from ``layout`` in place.

    File-cache and anonymous pages go first, drawn uniformly from their
    union; huge-page-backed anonymous pages follow once both are exhausted.
    Pinned pages are never released.  Released frames become Free and join
    the free pool.  If fewer than ``demand`` pages are releasable, everything
    releasable goes and the remainder is reported as ``shortfall``.
    """
    if demand < 0:
        raise ConfigurationError("demand must be non-negative")
    rng = PageRng(seed)
    file_list = layout.lists[PageUsage.FILE_CACHE]
    anon_list = layout.lists[PageUsage.ANON]
    huge_list = layout.lists[PageUsage.ANON_HUGE]
    nfile, nanon = file_list.size, anon_list.size

    first_tier = min(demand, nfile + nanon)
    # A uniform draw over the union of two shuffled lists is a random
    # interleaving of their heads.
    labels = np.zeros(nfile + nanon, dtype=bool)
    labels[nfile:] = True
    labels = labels[rng.permutation(nfile + nanon)][:first_tier]
    taken_anon = int(labels.sum())
    taken_file = first_tier - taken_anon
    released_first = np.empty(first_tier, dtype=np.int64)
    released_first[labels] = anon_list[:taken_anon]
    released_first[~labels] = file_list[:taken_file]

    second_tier = min(demand - first_tier, huge_list.size)
    released = np.concatenate((released_first, huge_list[:second_tier]))

    layout.lists[PageUsage.FILE_CACHE] = file_list[taken_file:]
    layout.lists[PageUsage.ANON] = anon_list[taken_anon:]
    layout.lists[PageUsage.ANON_HUGE] = huge_list[second_tier:]
    layout.pages[released] = PageUsage.FREE
    layout.free_pool += int(released.size)
    return ShrinkResult(released, int(demand - released.size))


def to_snapshot(layout, page_size_bytes=4096, machine="synthetic"):
    return Snapshot(layout.pages.copy(), page_size_bytes, machine, None,
                    layout.reserved_pages, extra={"layout": dict(layout.meta)})


# ---------------------------------------------------------------------------
# serialization


def _encode_frames(frames):
    return base64.b64encode(np.asarray(frames, dtype="<u8").tobytes()).decode("ascii")


def _decode_frames(text):
    return np.frombuffer(base64.b64decode(text.encode("ascii"), validate=True),
                         dtype="<u8").astype(np.int64)


def layout_document(layout):
    """JSON-ready description of a layout, including the ordered page lists."""
    return {
        "kind": "layout",
        "version": LAYOUT_VERSION,
        "meta": layout.meta,
        "total_pages": layout.total_pages,
        "reserved_pages": layout.reserved_pages,
        "free_pool": layout.free_pool,
        "lists": {LIST_TAGS[u]: _encode_frames(layout.lists[u]) for u in LIST_USAGES},
    }


def layout_from_document(snapshot, doc):
    """Rebuild a :class:`SynthLayout` from its snapshot and document."""
    try:
        if doc.get("kind") != "layout" or doc.get("version") != LAYOUT_VERSION:
            raise InputError("not a layout document")
        lists = {u: _decode_frames(doc["lists"][LIST_TAGS[u]]) for u in LIST_USAGES}
        layout = SynthLayout(np.array(snapshot.pages, dtype=np.uint8), lists,
                             int(doc["free_pool"]), int(doc["reserved_pages"]),
                             dict(doc.get("meta", {})))
        if layout.total_pages != int(doc["total_pages"]):
            raise InputError("layout document does not match its snapshot")
    except (AttributeError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed layout document: {exc}") from None
    for usage, frames in lists.items():
        if frames.size and (frames.min() < 0 or frames.max() >= layout.total_pages
                            or np.any(layout.pages[frames] != usage)):
            raise InputError(f"layout list {LIST_TAGS[usage]} disagrees with the page map")
    if layout.accounted_pages() != layout.total_pages:
        raise InputError("layout document does not account for every page")
    return layout
