import hashlib
import os

import numpy as np
import pytest

import oracles
from memfrag.files import read_snapshot
from memfrag.render import (
    BACKGROUND, DEFAULT_PALETTE, RESERVED, RenderSpec, parse_ppm, render_memory_map,
)
from memfrag.snapshot import PageUsage, Snapshot, load_usage_map

U = PageUsage

GOLDEN = {
    "mixed": ((1024, 64), "801993a1dc7b1a5459f4fe64c8be0bf983306c4c7d64c583cbaa33d763d5bd5d"),
    "ties": ((512, 64), "dec4334793b72b817b91afe476ebc240fb8a5ba2600ff50a0c4a5298bad0942b"),
    "synthetic": ((262144, 1024),
                  "e34e2bb7bac91a5c1c138cb981fec3985d4f5fa579353bc1dec2ca8fd91588c6"),
}


def palette_list():
    return [DEFAULT_PALETTE[u] for u in PageUsage] + [DEFAULT_PALETTE[RESERVED]]


def oracle_pixels(snap, span, width):
    rows = oracles.render(snap.pages.tolist(), snap.reserved_pages, span, width,
                          palette_list(), BACKGROUND)
    return np.array(rows, dtype=np.uint8)


@pytest.mark.parametrize("name", sorted(GOLDEN))
def test_golden(name, fixtures_dir):
    (span, width), digest = GOLDEN[name]
    snap = read_snapshot(os.path.join(fixtures_dir, f"{name}.txt"))
    image = render_memory_map(snap, RenderSpec(span, width))
    with open(os.path.join(fixtures_dir, f"{name}.ppm"), "rb") as f:
        assert image == f.read()
    assert hashlib.sha256(image).hexdigest() == digest


@pytest.mark.parametrize("name", ["mixed", "ties"])
def test_golden_matches_oracle(name, fixtures_dir):
    (span, width), _ = GOLDEN[name]
    snap = read_snapshot(os.path.join(fixtures_dir, f"{name}.txt"))
    w, h, pixels = parse_ppm(render_memory_map(snap, RenderSpec(span, width)))
    assert np.array_equal(pixels, oracle_pixels(snap, span, width))


def test_random_against_oracle(rng):
    for _ in range(15):
        n = int(rng.integers(1, 3000))
        span = int(rng.integers(1, 700))
        width = int(rng.integers(1, span + 1))
        pages = np.repeat(rng.integers(0, 7, size=n), rng.integers(1, 6, size=n))[:n]
        snap = Snapshot(pages.astype(np.uint8), reserved_pages=int(rng.integers(0, n)))
        _, _, pixels = parse_ppm(render_memory_map(snap, RenderSpec(span, width)))
        assert np.array_equal(pixels, oracle_pixels(snap, span, width))


def test_all_free_gib():
    snap = Snapshot(np.zeros(262144, dtype=np.uint8))
    w, h, pixels = parse_ppm(render_memory_map(snap))
    assert (w, h) == (1024, 1)
    assert np.all(pixels == DEFAULT_PALETTE[U.FREE])


def test_half_and_half():
    pages = np.concatenate([np.zeros(131072), np.full(131072, U.ANON)]).astype(np.uint8)
    _, _, pixels = parse_ppm(render_memory_map(Snapshot(pages)))
    assert np.all(pixels[0, :512] == DEFAULT_PALETTE[U.FREE])
    assert np.all(pixels[0, 512:] == DEFAULT_PALETTE[U.ANON])


def test_tie_goes_to_free():
    _, _, pixels = parse_ppm(render_memory_map(load_usage_map("AAFF"), RenderSpec(4, 1)))
    assert tuple(pixels[0, 0]) == DEFAULT_PALETTE[U.FREE]


def test_padding_is_background():
    _, h, pixels = parse_ppm(render_memory_map(load_usage_map("F" * 6), RenderSpec(4, 2)))
    assert h == 2
    assert tuple(pixels[1, 1]) == BACKGROUND


def test_header():
    image = render_memory_map(load_usage_map("F" * 8), RenderSpec(4, 2))
    assert image.startswith(b"P6\n# memfrag memory map, plurality downsampling\n2 2\n255\n")


def test_bad_spec():
    with pytest.raises(ValueError):
        RenderSpec(4, 8)
    with pytest.raises(ValueError):
        RenderSpec(4, 2, palette={})


def test_row_size():
    assert RenderSpec.for_row_size(1 << 30) == RenderSpec(262144, 1024)
    assert RenderSpec.for_row_size(1 << 20, width=1024).output_width_px == 256
