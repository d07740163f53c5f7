"""Page-flag snapshots.

A snapshot is one usage code per physical page frame.  Two input formats are
understood:

* raw ``/proc/kpageflags`` dumps: little-endian 64-bit words, one per frame,
  no header;
* the usage-map text format, one character per page from the alphabet
  ``F A H C P S O`` (whitespace is ignored).

Flag bits follow the Linux kpageflags ABI.  A page is classified by the first
matching rule:

====  =======================================================  ===========
rule  condition                                                usage
====  =======================================================  ===========
1     NOPAGE (20), HWPOISON (19), ZERO_PAGE (24), OFFLINE (23)  Other
2     BUDDY (10)                                               Free
3     SLAB (7)                                                 Slab
4     ANON (12) and THP (22)                                   AnonHuge
5     ANON (12)                                                Anon
6     LRU (5)                                                  FileCache
7     anything else                                            Pinned
====  =======================================================  ===========

The kernel does not publish a mapping from flags to these seven usages; the
table above is a reconstruction.  Compound-page bits are ignored on purpose,
contiguity is recovered by segmenting usage runs instead.
"""

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np

from .errors import EmptyDumpError, FixtureFormatError, MalformedDumpError

KPF_LRU = 5
KPF_SLAB = 7
KPF_BUDDY = 10
KPF_ANON = 12
KPF_HWPOISON = 19
KPF_NOPAGE = 20
KPF_THP = 22
KPF_OFFLINE = 23
KPF_ZERO_PAGE = 24

CLASSIFIER_BITS = (
    KPF_LRU, KPF_SLAB, KPF_BUDDY, KPF_ANON, KPF_HWPOISON,
    KPF_NOPAGE, KPF_THP, KPF_OFFLINE, KPF_ZERO_PAGE,
)

DEFAULT_PAGE_SIZE = 4096


class PageUsage(IntEnum):
    # Declaration order doubles as the render tie-break order.
    FREE = 0
    FILE_CACHE = 1
    ANON = 2
    ANON_HUGE = 3
    PINNED = 4
    SLAB = 5
    OTHER = 6

    @property
    def letter(self):
        return USAGE_LETTERS[self]


USAGE_LETTERS = {
    PageUsage.FREE: "F",
    PageUsage.ANON: "A",
    PageUsage.ANON_HUGE: "H",
    PageUsage.FILE_CACHE: "C",
    PageUsage.PINNED: "P",
    PageUsage.SLAB: "S",
    PageUsage.OTHER: "O",
}

_WHITESPACE_CODE = 254
_INVALID_CODE = 255

_DECODE = np.full(256, _INVALID_CODE, dtype=np.uint8)
for _usage, _letter in USAGE_LETTERS.items():
    _DECODE[ord(_letter)] = int(_usage)
for _ws in b" \t\n\r\v\f":
    _DECODE[_ws] = _WHITESPACE_CODE

_ENCODE = np.zeros(len(PageUsage), dtype=np.uint8)
for _usage, _letter in USAGE_LETTERS.items():
    _ENCODE[int(_usage)] = ord(_letter)

USAGE_MAP_LINE = 512


def _freeze(array):
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class Snapshot:
    """Per-page usage codes for one physical address space.

    ``pages`` is a read-only ``uint8`` array of :class:`PageUsage` values,
    indexed by page frame number.  ``reserved_pages`` counts a leading prefix
    that was never handed to the fragmenter (boot-time memory in synthesized
    layouts); it is zero for captured snapshots.
    """

    pages: np.ndarray
    page_size_bytes: int = DEFAULT_PAGE_SIZE
    machine: str = ""
    timestamp: Optional[float] = None
    reserved_pages: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pages = np.asarray(self.pages, dtype=np.uint8)
        if pages.ndim != 1 or pages.size == 0:
            raise EmptyDumpError("a snapshot needs at least one page")
        if pages.max() >= len(PageUsage):
            raise ValueError("page array holds codes outside PageUsage")
        size = self.page_size_bytes
        if size <= 0 or size & (size - 1):
            raise ValueError(f"page size {size} is not a power of two")
        if not 0 <= self.reserved_pages <= pages.size:
            raise ValueError("reserved prefix exceeds snapshot length")
        if pages is self.pages and pages.flags.writeable:
            pages = pages.copy()
        object.__setattr__(self, "pages", _freeze(pages))

    def __len__(self):
        return self.pages.size

    def __eq__(self, other):
        if not isinstance(other, Snapshot):
            return NotImplemented
        return (
            self.page_size_bytes == other.page_size_bytes
            and self.machine == other.machine
            and self.timestamp == other.timestamp
            and self.reserved_pages == other.reserved_pages
            and np.array_equal(self.pages, other.pages)
        )

    @property
    def usages(self):
        return [PageUsage(int(code)) for code in self.pages]


def classify_page(flags):
    """Return the :class:`PageUsage` of a single 64-bit kpageflags word."""
    flags = int(flags)

    def has(bit):
        return (flags >> bit) & 1

    if has(KPF_NOPAGE) or has(KPF_HWPOISON) or has(KPF_ZERO_PAGE) or has(KPF_OFFLINE):
        return PageUsage.OTHER
    if has(KPF_BUDDY):
        return PageUsage.FREE
    if has(KPF_SLAB):
        return PageUsage.SLAB
    if has(KPF_ANON):
        return PageUsage.ANON_HUGE if has(KPF_THP) else PageUsage.ANON
    if has(KPF_LRU):
        return PageUsage.FILE_CACHE
    return PageUsage.PINNED


# All classifier bits sit in 5..24, so the usage is a function of that 20-bit
# window and a 1 MiB lookup table replaces per-rule masking.
_WINDOW_SHIFT = min(CLASSIFIER_BITS)
_WINDOW_BITS = max(CLASSIFIER_BITS) - _WINDOW_SHIFT + 1
_TABLE = None


def _select(words):
    def bit(n):
        return (words & np.uint64(1 << n)) != 0

    anon = bit(KPF_ANON)
    conditions = [
        bit(KPF_NOPAGE) | bit(KPF_HWPOISON) | bit(KPF_ZERO_PAGE) | bit(KPF_OFFLINE),
        bit(KPF_BUDDY),
        bit(KPF_SLAB),
        anon & bit(KPF_THP),
        anon,
        bit(KPF_LRU),
    ]
    choices = [
        PageUsage.OTHER, PageUsage.FREE, PageUsage.SLAB,
        PageUsage.ANON_HUGE, PageUsage.ANON, PageUsage.FILE_CACHE,
    ]
    return np.select(conditions, [np.uint8(c) for c in choices],
                     default=np.uint8(PageUsage.PINNED)).astype(np.uint8)


def _lookup_table():
    global _TABLE
    if _TABLE is None:
        window = np.arange(1 << _WINDOW_BITS, dtype=np.uint64) << np.uint64(_WINDOW_SHIFT)
        _TABLE = _select(window)
    return _TABLE


def classify_flags(words):
    """Vectorized :func:`classify_page` over an array of flag words."""
    words = np.asarray(words, dtype=np.uint64)
    index = (words >> np.uint64(_WINDOW_SHIFT)) & np.uint64((1 << _WINDOW_BITS) - 1)
    return _lookup_table()[index.astype(np.intp)]


def parse_kpageflags(raw, page_size_bytes=DEFAULT_PAGE_SIZE, machine="", timestamp=None):
    """Parse a raw kpageflags dump into a :class:`Snapshot`."""
    raw = bytes(raw) if not isinstance(raw, (bytes, bytearray, memoryview)) else raw
    if len(raw) == 0:
        raise EmptyDumpError("kpageflags dump is empty")
    if len(raw) % 8:
        raise MalformedDumpError(
            f"kpageflags dump length {len(raw)} is not a multiple of 8 bytes"
        )
    words = np.frombuffer(raw, dtype="<u8")
    return Snapshot(classify_flags(words), page_size_bytes, machine, timestamp)


def load_usage_map(text, page_size_bytes=DEFAULT_PAGE_SIZE, machine="", timestamp=None):
    """Parse usage-map text; raises :class:`FixtureFormatError` on a bad character.

    The reported offset is a character index into ``text``.
    """
    # Non-ASCII characters become "?" one-for-one, keeping offsets intact.
    encoded = text.encode("ascii", errors="replace")
    codes = _DECODE[np.frombuffer(encoded, dtype=np.uint8)]
    bad = np.flatnonzero(codes == _INVALID_CODE)
    if bad.size:
        offset = int(bad[0])
        raise FixtureFormatError(offset, text[offset])
    pages = codes[codes != _WHITESPACE_CODE]
    if pages.size == 0:
        raise EmptyDumpError("usage map holds no pages")
    return Snapshot(pages, page_size_bytes, machine, timestamp)


def write_usage_map(snapshot, line_length=USAGE_MAP_LINE):
    """Serialize a snapshot as usage-map text, ``line_length`` pages per line."""
    letters = _ENCODE[snapshot.pages].tobytes().decode("ascii")
    if not line_length:
        return letters + "\n"
    lines = [letters[i:i + line_length] for i in range(0, len(letters), line_length)]
    return "\n".join(lines) + "\n"
