import json

import numpy as np
import pytest

import oracles
from helpers import random_profile
from memfrag.errors import ConfigurationError, InputError
from memfrag.markov import MemoryClass, Profile, count_transitions, profile_regions
from memfrag.snapshot import PageUsage
from memfrag.synth import (
    PageRng, StartMode, SynthLayout, WalkConfig, derive_seed, layout_document,
    layout_from_document, partition_sizes, shrink, synthesize, synthesize_partitioned,
    to_snapshot,
)

U = PageUsage


def single(size, usage):
    return Profile.from_dense([MemoryClass(size, usage)], [[1.0]])


def cycle():
    return Profile.from_dense([MemoryClass(4, U.ANON), MemoryClass(2, U.FREE)],
                              [[0, 1], [1, 0]])


def letters(pages):
    return "".join("FCAHPSO"[p] for p in pages)


def layout_with_lists(nfile, nanon, nhuge, npinned):
    pages = np.concatenate([
        np.full(nfile, U.FILE_CACHE), np.full(nanon, U.ANON),
        np.full(nhuge, U.ANON_HUGE), np.full(npinned, U.PINNED),
    ]).astype(np.uint8)
    rng = PageRng(1)
    lists = {u: rng.shuffle(np.flatnonzero(pages == u)) for u in
             (U.FILE_CACHE, U.ANON, U.ANON_HUGE, U.PINNED)}
    return SynthLayout(pages, lists, 0, 0)


class TestRng:
    def test_reproducible(self):
        assert PageRng(5).raw(10).tolist() == PageRng(5).raw(10).tolist()

    def test_uniform_range(self):
        u = PageRng(3).uniforms(10000)
        assert u.min() >= 0 and u.max() < 1

    def test_pinned_stream(self):
        # PCG64 seeded with 0: these values pin the generator choice.
        assert PageRng(0).raw(2).tolist() == np.random.PCG64(0).random_raw(2).tolist()

    def test_permutation(self):
        perm = PageRng(8).permutation(1000)
        assert sorted(perm.tolist()) == list(range(1000))

    def test_derive_seed(self):
        assert derive_seed(1, "partition", 0) == derive_seed(1, "partition", 0)
        assert derive_seed(1, "partition", 0) != derive_seed(1, "partition", 1)
        assert 0 <= derive_seed(2 ** 64 - 1, "x") < 2 ** 64


class TestSynthesize:
    def test_single_state(self):
        layout = synthesize(single(512, U.ANON_HUGE), WalkConfig(5120, 1))
        assert np.all(layout.pages == U.ANON_HUGE)
        assert layout.meta["walk_steps"] == 10
        assert layout.lists[U.ANON_HUGE].size == 5120

    def test_forced_cycle(self):
        layout = synthesize(cycle(), WalkConfig(12, 1, StartMode.FIRST))
        assert letters(layout.pages) == "AAAAFFAAAAFF"
        assert layout.free_pool == 4
        assert sorted(layout.lists[U.ANON].tolist()) == [0, 1, 2, 3, 6, 7, 8, 9]

    def test_truncation(self):
        layout = synthesize(single(512, U.PINNED), WalkConfig(10, 1))
        assert letters(layout.pages) == "P" * 10
        assert layout.meta["walk_steps"] == 1

    def test_reserved_prefix(self):
        layout = synthesize(single(8, U.FREE), WalkConfig(1000, 3, reserved_fraction=0.05))
        assert layout.reserved_pages == 50
        assert np.all(layout.pages[:50] == U.PINNED) and np.all(layout.pages[50:] == U.FREE)
        assert layout.lists[U.PINNED].size == 0
        layout.check_conservation()

    @pytest.mark.parametrize("kwargs", [
        dict(total_pages=0, seed=1), dict(total_pages=10, seed=-1),
        dict(total_pages=10, seed=2 ** 64), dict(total_pages=10, seed=1, reserved_fraction=1.0),
    ])
    def test_bad_config(self, kwargs):
        with pytest.raises(ConfigurationError):
            WalkConfig(**kwargs)

    @pytest.mark.parametrize("mode", list(StartMode))
    def test_deterministic(self, mode, rng):
        profile = random_profile(rng, 20)
        a = synthesize(profile, WalkConfig(50000, 42, mode))
        b = synthesize(profile, WalkConfig(50000, 42, mode))
        assert np.array_equal(a.pages, b.pages)
        assert json.dumps(layout_document(a)) == json.dumps(layout_document(b))
        c = synthesize(profile, WalkConfig(50000, 43, mode))
        assert not np.array_equal(a.pages, c.pages)

    def test_lists_partition_pages(self, rng):
        layout = synthesize(random_profile(rng, 15), WalkConfig(40000, 9, reserved_fraction=0.1))
        seen = np.concatenate(list(layout.lists.values()))
        assert np.unique(seen).size == seen.size
        for usage, frames in layout.lists.items():
            assert np.all(layout.pages[frames] == usage)
        assert layout.free_pool == int(np.sum(layout.pages[layout.reserved_pages:] == U.FREE))
        layout.check_conservation()

    def test_transition_frequencies(self, rng):
        # Realizable profiles re-segment into the walked classes, so the
        # empirical transition matrix estimates P; each well-visited entry
        # must lie within 5 binomial standard errors (exact for p in {0, 1}).
        profile = random_profile(rng, 12)
        layout = synthesize(profile, WalkConfig(1 << 21, 77))
        seq = profile_regions(layout.pages)
        # The final region is truncated to fit, so it is left out.
        walked = list(zip(seq.lens[:-1].tolist(), seq.usages[:-1].tolist()))
        states, counts = count_transitions(walked)
        dense = counts.toarray()
        index = {s: k for k, s in enumerate(states)}
        p = profile.dense()
        for i, a in enumerate(profile.states):
            n = dense[index[a]].sum()
            assert n > 100
            for j, b in enumerate(profile.states):
                observed = dense[index[a], index[b]] / n if b in index else 0.0
                se = np.sqrt(p[i, j] * (1 - p[i, j]) / n)
                assert abs(observed - p[i, j]) <= 5 * se + 1e-12


class TestPartitioned:
    def test_two_halves(self):
        layout = synthesize_partitioned(
            [(single(512, U.ANON_HUGE), 0.5), (single(512, U.FILE_CACHE), 0.5)],
            WalkConfig(1000, 4))
        assert letters(layout.pages) == "H" * 500 + "C" * 500
        layout.check_conservation()

    def test_single_partition_is_synthesize(self, rng):
        profile = random_profile(rng, 8)
        config = WalkConfig(20000, 11)
        a = synthesize_partitioned([(profile, 1.0)], config)
        b = synthesize(profile, config)
        assert np.array_equal(a.pages, b.pages)
        assert layout_document(a) == layout_document(b)

    def test_thirds(self):
        assert partition_sizes([1 / 3] * 3, 1000) == [334, 333, 333]

    def test_sizes_oracle(self, rng):
        for _ in range(200):
            k = int(rng.integers(1, 6))
            fractions = rng.dirichlet(np.ones(k)).tolist()
            total = int(rng.integers(1, 10 ** 6))
            sizes = partition_sizes(fractions, total)
            assert sum(sizes) == total
            assert sizes == oracles.largest_remainder(fractions, total)

    def test_bad_fractions(self):
        with pytest.raises(ConfigurationError):
            synthesize_partitioned([(cycle(), 0.5), (cycle(), 0.4)], WalkConfig(10, 1))
        with pytest.raises(ConfigurationError):
            synthesize_partitioned([], WalkConfig(10, 1))


class TestShrink:
    def test_tiers(self):
        layout = layout_with_lists(100, 100, 100, 100)
        result = shrink(layout, 250, 5)
        released = result.released
        assert result.shortfall == 0 and released.size == 250
        assert np.all(released[:200] < 200)
        assert np.all((released[200:] >= 200) & (released[200:] < 300))
        assert layout.lists[U.PINNED].size == 100
        assert np.all(layout.pages[300:] == U.PINNED)
        assert layout.free_pool == 250
        layout.check_conservation()

    def test_zero(self):
        layout = layout_with_lists(100, 100, 100, 100)
        before = layout.pages.copy()
        result = shrink(layout, 0, 5)
        assert result.released.size == 0 and result.shortfall == 0
        assert np.array_equal(before, layout.pages)

    def test_shortfall(self):
        layout = layout_with_lists(100, 100, 100, 100)
        result = shrink(layout, 500, 5)
        assert result.released.size == 300 and result.shortfall == 200
        assert set(layout.pages[:300].tolist()) == {U.FREE}

    def test_interleaving_is_mixed(self):
        layout = layout_with_lists(1000, 1000, 0, 0)
        released = shrink(layout, 1000, 7).released
        from_anon = int(np.sum((released >= 1000)))
        assert 400 < from_anon < 600

    def test_release_order_follows_list_heads(self):
        layout = layout_with_lists(50, 50, 50, 0)
        heads = {u: layout.lists[u].copy() for u in (U.FILE_CACHE, U.ANON, U.ANON_HUGE)}
        released = shrink(layout, 120, 3).released
        file_part = released[:100][released[:100] < 50]
        anon_part = released[:100][released[:100] >= 50]
        assert file_part.tolist() == heads[U.FILE_CACHE][:file_part.size].tolist()
        assert anon_part.tolist() == heads[U.ANON][:anon_part.size].tolist()
        assert released[100:].tolist() == heads[U.ANON_HUGE][:20].tolist()

    def test_negative_demand(self):
        with pytest.raises(ConfigurationError):
            shrink(layout_with_lists(1, 1, 1, 1), -1, 1)


class TestSerialization:
    def test_round_trip(self, rng):
        layout = synthesize(random_profile(rng, 10), WalkConfig(30000, 5, reserved_fraction=0.02))
        shrink(layout, 5000, 8)
        snap = to_snapshot(layout)
        doc = json.loads(json.dumps(layout_document(layout)))
        back = layout_from_document(snap, doc)
        assert np.array_equal(back.pages, layout.pages)
        assert back.free_pool == layout.free_pool
        for usage in layout.lists:
            assert back.lists[usage].tolist() == layout.lists[usage].tolist()

    def test_to_snapshot(self):
        layout = synthesize(single(512, U.ANON_HUGE), WalkConfig(5120, 1))
        snap = to_snapshot(layout)
        assert len(snap) == 5120 and set(snap.usages) == {U.ANON_HUGE}

    def test_tampered_document(self, rng):
        layout = synthesize(random_profile(rng, 6), WalkConfig(5000, 5))
        doc = json.loads(json.dumps(layout_document(layout)))
        doc["free_pool"] += 1
        with pytest.raises(InputError):
            layout_from_document(to_snapshot(layout), doc)
