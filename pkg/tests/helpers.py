"""Random inputs shared by the test modules."""

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from memfrag.markov import PROFILE_USAGES, MemoryClass, Profile
from memfrag.regions import MAX_REGION_PAGES

SIZES = tuple(1 << k for k in range(11))

# (criterion number, "PASS/FAIL ..." line) per acceptance criterion run.
ACCEPTANCE_LOG = []


def record_criterion(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    ACCEPTANCE_LOG.append((number, line))
    print(line)
    return ok


def _allowed(a, b):
    # Pairs that segmentation can actually produce: equal usages only
    # follow a cap-sized region.
    return a.usage != b.usage or a.size == MAX_REGION_PAGES


def random_profile(rng, n_states, out_degree=(1, 4), realizable=True):
    """Random strongly connected profile over the full class alphabet.

    With ``realizable`` every edge respects segmentation, so a synthesized
    layout re-segments into exactly the walked classes.
    """
    classes = [MemoryClass(s, u) for u in PROFILE_USAGES for s in SIZES]
    while True:
        picks = rng.choice(len(classes), size=n_states, replace=False)
        states = [classes[i] for i in picks]
        dense = np.zeros((n_states, n_states))
        for i, a in enumerate(states):
            options = [j for j, b in enumerate(states) if not realizable or _allowed(a, b)]
            if not options:
                break
            k = min(len(options), int(rng.integers(out_degree[0], out_degree[1] + 1)))
            for j in rng.choice(options, size=k, replace=False):
                dense[i, j] = rng.uniform(0.05, 1.0)
        else:
            ncomp, _ = connected_components(sp.csr_matrix(dense), connection="strong")
            if ncomp == 1:
                dense /= dense.sum(axis=1, keepdims=True)
                return Profile.from_dense(states, dense, {"source": "random"})


def cyclic_profile(rng, n_states, extra_degree=(0, 3), low=0.05):
    """Random profile over arbitrary sizes, strongly connected by construction.

    A random Hamiltonian cycle guarantees irreducibility; each state then
    gets a few extra random edges.  Not necessarily realizable.
    """
    states = random_classes(rng, n_states)
    order = rng.permutation(n_states)
    dense = np.zeros((n_states, n_states))
    dense[order, np.roll(order, -1)] = rng.uniform(low, 1.0, size=n_states)
    for i in range(n_states):
        k = int(rng.integers(extra_degree[0], extra_degree[1] + 1))
        for j in rng.choice(n_states, size=min(k, n_states), replace=False):
            dense[i, j] += rng.uniform(low, 1.0)
    dense /= dense.sum(axis=1, keepdims=True)
    return Profile.from_dense(states, dense, {"source": "cyclic"})


def random_classes(rng, n_states):
    codes = rng.choice(len(PROFILE_USAGES) * MAX_REGION_PAGES, size=n_states, replace=False)
    return [MemoryClass(int(c % MAX_REGION_PAGES) + 1, PROFILE_USAGES[c // MAX_REGION_PAGES])
            for c in codes]


def adversarial_chain(rng):
    """Row-stochastic matrix with several components, transient tails and tiny edges.

    Returns ``(states, dense, threshold)``.  Built from strongly connected
    blocks, some of which leak into others, plus chains of transient states
    feeding the blocks and a sprinkle of edges light enough to be pruned.
    """
    nblocks = int(rng.integers(1, 6))
    blocks = []
    n = 0
    for _ in range(nblocks):
        size = int(rng.integers(1, 8))
        blocks.append(list(range(n, n + size)))
        n += size
    tails = []
    for _ in range(int(rng.integers(0, 5))):
        length = int(rng.integers(1, 6))
        tails.append(list(range(n, n + length)))
        n += length
    # Diffuse states spread their row over every state; under a large
    # enough threshold pruning empties them, and their feeders die next.
    ndiffuse = int(rng.integers(0, 3))
    diffuse = list(range(n, n + ndiffuse))
    feeders = list(range(n + ndiffuse, n + 2 * ndiffuse))
    n += 2 * ndiffuse
    dense = np.zeros((n, n))
    for block in blocks:
        order = rng.permutation(block)
        for a, b in zip(order, np.roll(order, -1)):
            dense[a, b] += rng.uniform(0.3, 1.0)
        for _ in range(int(rng.integers(0, 2 * len(block) + 1))):
            dense[rng.choice(block), rng.choice(block)] += rng.uniform(0.3, 1.0)
    # Some blocks leak into later blocks, making them transient.
    for k in range(nblocks - 1):
        if rng.random() < 0.4:
            src = rng.choice(blocks[k])
            dst = rng.choice(blocks[int(rng.integers(k + 1, nblocks))])
            dense[src, dst] += rng.uniform(0.3, 1.0)
    for tail in tails:
        for a, b in zip(tail, tail[1:]):
            dense[a, b] += rng.uniform(0.3, 1.0)
        dense[tail[-1], rng.choice(blocks[int(rng.integers(nblocks))])] += rng.uniform(0.3, 1.0)
        if rng.random() < 0.3:
            dense[tail[-1], tail[0]] += rng.uniform(0.3, 1.0)
    for d, f in zip(diffuse, feeders):
        dense[d, :] = 1.0
        dense[f, d] = 1.0
    threshold = float(rng.choice([0.0, 1e-4, 0.01, 0.05]))
    # Light edges: some fall below the threshold, some survive.
    for _ in range(int(rng.integers(0, 3 * n + 1))):
        src = int(rng.integers(n))
        if src not in diffuse:
            dense[src, rng.integers(n)] += 10 ** rng.uniform(-6, -1)
    dense /= dense.sum(axis=1, keepdims=True)
    return random_classes(rng, n), dense, threshold
