"""Uniform spanning trees and population-balanced tree cuts.

The kernels run under numba and draw from numba's internal generator,
reseeded on every call from a numpy ``Generator`` so results depend only
on the caller's stream.
"""
from __future__ import annotations

import numba
import numpy as np

_SEED_HIGH = np.iinfo(np.int32).max


@numba.njit(cache=True)
def _wilson(indptr, indices, root):
    # loop-erased random walks; `nxt` doubles as the parent pointer
    m = indptr.size - 1
    intree = np.zeros(m, np.bool_)
    nxt = np.full(m, -1, np.int64)
    intree[root] = True
    for s in range(m):
        u = s
        while not intree[u]:
            deg = indptr[u + 1] - indptr[u]
            nxt[u] = indices[indptr[u] + np.random.randint(deg)]
            u = nxt[u]
        u = s
        while not intree[u]:
            intree[u] = True
            u = nxt[u]
    nxt[root] = -1
    return nxt


@numba.njit(cache=True)
def _bfs_order(parent, root):
    m = parent.size
    counts = np.zeros(m + 1, np.int64)
    for v in range(m):
        if parent[v] >= 0:
            counts[parent[v] + 1] += 1
    for v in range(m):
        counts[v + 1] += counts[v]
    children = np.empty(max(m - 1, 0), np.int64)
    fill = counts[:-1].copy()
    for v in range(m):
        p = parent[v]
        if p >= 0:
            children[fill[p]] = v
            fill[p] += 1
    order = np.empty(m, np.int64)
    order[0] = root
    head, tail = 0, 1
    while head < tail:
        u = order[head]
        head += 1
        for c in range(counts[u], counts[u + 1]):
            order[tail] = children[c]
            tail += 1
    return order


@numba.njit(cache=True)
def _subtree_mask(parent, order, v):
    m = parent.size
    mask = np.zeros(m, np.bool_)
    mask[v] = True
    # parents precede children in BFS order
    for idx in range(m):
        u = order[idx]
        p = parent[u]
        if p >= 0 and mask[p]:
            mask[u] = True
    return mask


@numba.njit(cache=True)
def _split(indptr, indices, pops, seed, lo, hi, rest_lo, rest_hi, max_tries):
    """
    Draw spanning trees until one has an edge whose removal leaves a side
    with population in [lo, hi] and the other in [rest_lo, rest_hi].

    Returns (tries used, mask of the [lo, hi] side); the mask is empty
    when every try failed.
    """
    np.random.seed(seed)
    m = indptr.size - 1
    total = pops.sum()
    for attempt in range(1, max_tries + 1):
        root = np.random.randint(m)
        parent = _wilson(indptr, indices, root)
        order = _bfs_order(parent, root)
        sub = pops.copy()
        for idx in range(m - 1, 0, -1):
            u = order[idx]
            sub[parent[u]] += sub[u]
        cand = np.empty(2 * m, np.int64)
        ncand = 0
        for u in range(m):
            if u == root:
                continue
            inside = sub[u]
            outside = total - inside
            if lo <= inside <= hi and rest_lo <= outside <= rest_hi:
                cand[ncand] = u
                ncand += 1
            if lo <= outside <= hi and rest_lo <= inside <= rest_hi:
                cand[ncand] = -u - 1
                ncand += 1
        if ncand == 0:
            continue
        pick = cand[np.random.randint(ncand)]
        if pick >= 0:
            return attempt, _subtree_mask(parent, order, pick)
        mask = _subtree_mask(parent, order, -pick - 1)
        return attempt, ~mask
    return max_tries, np.zeros(0, np.bool_)


@numba.njit(cache=True)
def _tree_only(indptr, indices, seed, root):
    np.random.seed(seed)
    return _wilson(indptr, indices, root)


@numba.njit(cache=True)
def _induced(indptr, indices, nodes, n):
    local = np.full(n, -1, np.int64)
    for t in range(nodes.size):
        local[nodes[t]] = t
    sub_ptr = np.zeros(nodes.size + 1, np.int64)
    buf = np.empty(indices.size, np.int64)
    fill = 0
    for t in range(nodes.size):
        u = nodes[t]
        for e in range(indptr[u], indptr[u + 1]):
            v = local[indices[e]]
            if v >= 0:
                buf[fill] = v
                fill += 1
        sub_ptr[t + 1] = fill
    return sub_ptr, buf[:fill].copy()


def induced_csr(g, nodes: np.ndarray):
    """Local CSR arrays of the subgraph of ``g`` induced by ``nodes`` (in that order)."""
    indptr, indices = g.csr
    return _induced(indptr, indices, np.asarray(nodes, dtype=np.int64), g.n)


def draw_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, _SEED_HIGH))


def uniform_spanning_tree(g, rng: np.random.Generator, root: int = 0) -> np.ndarray:
    """Parent array of a uniformly random spanning tree of ``g`` (root has parent -1)."""
    indptr, indices = g.csr
    return _tree_only(indptr, indices, draw_seed(rng), root)


def balanced_split(g, nodes: np.ndarray, bounds: tuple[float, float],
                   rest_bounds: tuple[float, float], rng: np.random.Generator, max_tries: int):
    """
    Split the subgraph induced by ``nodes`` along a random spanning tree.

    Returns ``(tries, side)`` where ``side`` holds the global indices of the
    part whose population lies in ``bounds`` while the rest lies in
    ``rest_bounds``, or ``None`` if no try produced an admissible edge.
    Among admissible edges of one tree the choice is uniform.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    indptr, indices = induced_csr(g, nodes)
    tries, mask = _split(indptr, indices, np.ascontiguousarray(g.pop_array[nodes]),
                         draw_seed(rng), bounds[0], bounds[1], rest_bounds[0], rest_bounds[1],
                         max_tries)
    if mask.size == 0:
        return tries, None
    return tries, nodes[mask]
