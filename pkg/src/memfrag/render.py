"""Memory-map images as binary portable pixmaps (P6).

Each image row covers ``row_span_pages`` consecutive page frames (1 GiB of
4 KiB pages by default).  Rows are downsampled to ``output_width_px`` pixels;
each pixel shows the usage held by most pages in its bucket, with ties going
to the usage that comes first in
``Free < FileCache < Anon < AnonHuge < Pinned < Slab < Other < reserved``.
Pixels past the end of the snapshot get the background colour.
"""

from dataclasses import dataclass, field

import numpy as np

from .snapshot import PageUsage

GIB = 1 << 30
DEFAULT_ROW_SPAN = GIB // 4096
DEFAULT_WIDTH = 1024

RESERVED = "reserved"

DEFAULT_PALETTE = {
    PageUsage.FREE: (255, 255, 255),
    PageUsage.FILE_CACHE: (0, 0, 255),
    PageUsage.ANON: (0, 192, 0),
    PageUsage.ANON_HUGE: (0, 100, 0),
    PageUsage.PINNED: (255, 0, 0),
    PageUsage.SLAB: (255, 165, 0),
    PageUsage.OTHER: (128, 128, 128),
    RESERVED: (128, 0, 128),
}
BACKGROUND = (0, 0, 0)

_RESERVED_CODE = len(PageUsage)
_PAD_CODE = _RESERVED_CODE + 1


@dataclass(frozen=True)
class RenderSpec:
    row_span_pages: int = DEFAULT_ROW_SPAN
    output_width_px: int = DEFAULT_WIDTH
    palette: dict = field(default_factory=lambda: dict(DEFAULT_PALETTE))
    background: tuple = BACKGROUND

    def __post_init__(self):
        if self.output_width_px < 1 or self.row_span_pages < 1:
            raise ValueError("row span and width must be positive")
        if self.output_width_px > self.row_span_pages:
            raise ValueError("output width cannot exceed the pages per row")
        missing = [key for key in list(PageUsage) + [RESERVED] if key not in self.palette]
        if missing:
            raise ValueError(f"palette lacks colours for {missing}")

    @classmethod
    def for_row_size(cls, row_bytes, page_size_bytes=4096, width=DEFAULT_WIDTH):
        span = max(1, int(row_bytes) // page_size_bytes)
        return cls(row_span_pages=span, output_width_px=min(width, span))


def _colour_table(spec):
    table = np.zeros((_PAD_CODE + 1, 3), dtype=np.uint8)
    for usage in PageUsage:
        table[int(usage)] = spec.palette[usage]
    table[_RESERVED_CODE] = spec.palette[RESERVED]
    table[_PAD_CODE] = spec.background
    return table


def pixel_codes(snapshot, spec):
    """Winning code per pixel, shape ``(rows, width)``; padding uses its own code."""
    span, width = spec.row_span_pages, spec.output_width_px
    n = len(snapshot)
    rows = -(-n // span)
    codes = np.full(rows * span, _PAD_CODE, dtype=np.uint8)
    codes[:n] = snapshot.pages
    codes[: snapshot.reserved_pages] = _RESERVED_CODE
    grid = codes.reshape(rows, span)
    starts = (np.arange(width, dtype=np.int64) * span) // width
    votes = np.stack([
        np.add.reduceat((grid == code).astype(np.int32), starts, axis=1)
        for code in range(_PAD_CODE)
    ])
    winner = np.argmax(votes, axis=0).astype(np.uint8)
    winner[votes.sum(axis=0) == 0] = _PAD_CODE
    return winner


def render_memory_map(snapshot, spec=None):
    """Render ``snapshot`` and return the P6 image bytes."""
    spec = spec or RenderSpec()
    winner = pixel_codes(snapshot, spec)
    rgb = _colour_table(spec)[winner]
    height, width = winner.shape
    header = f"P6\n# memfrag memory map, plurality downsampling\n{width} {height}\n255\n"
    return header.encode("ascii") + rgb.tobytes()


def parse_ppm(data):
    """Split a P6 image into ``(width, height, pixels)`` with pixels ``(h, w, 3)``."""
    tokens = []
    pos = 0
    if not data.startswith(b"P6"):
        raise ValueError("not a binary PPM")
    pos = 2
    while len(tokens) < 3:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(int(data[pos:end]))
        pos = end
    pos += 1
    width, height, maxval = tokens
    if maxval != 255:
        raise ValueError("only 8-bit PPM images are supported")
    pixels = np.frombuffer(data[pos:], dtype=np.uint8)
    if pixels.size != width * height * 3:
        raise ValueError("pixel data does not match the header")
    return width, height, pixels.reshape(height, width, 3)
