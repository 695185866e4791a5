"""Dual graphs of voting units: construction, validation, file I/O."""
from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


class GraphError(ValueError):
    """Raised when a dual graph violates one of its invariants."""


@dataclass(frozen=True, eq=False)
class DualGraph:
    """
    Voting units with positive populations and undirected adjacencies.

    Units are addressed by index everywhere except at I/O boundaries,
    where the string ids are used. Edges are stored as sorted ``(i, j)``
    pairs with ``i < j``.
    """

    ids: tuple[str, ...]
    pops: tuple[float, ...]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        n = len(self.ids)
        if len(self.pops) != n:
            raise GraphError("ids and pops differ in length")
        if n == 0:
            raise GraphError("graph has no units")
        seen = {}
        for idx, uid in enumerate(self.ids):
            if uid in seen:
                raise GraphError(f"duplicate id {uid!r} at units {seen[uid]} and {idx}")
            seen[uid] = idx
        for idx, p in enumerate(self.pops):
            if not np.isfinite(p) or p <= 0:
                raise GraphError(f"nonpositive population {p!r} for unit {self.ids[idx]!r}")
        pairs = set()
        for e in self.edges:
            i, j = e
            if i == j:
                raise GraphError(f"self-loop edge {list(e)}")
            if not (0 <= i < n and 0 <= j < n):
                raise GraphError(f"edge {list(e)} references a unit outside [0, {n})")
            key = (min(i, j), max(i, j))
            if key in pairs:
                raise GraphError(f"duplicate edge {list(e)}")
            pairs.add(key)
        object.__setattr__(self, "edges", tuple(sorted(pairs)))
        object.__setattr__(self, "pops", tuple(float(p) for p in self.pops))
        if n > 1:
            ncomp, labels = connected_components(self.adjacency, directed=False)
            if ncomp != 1:
                stray = int(np.flatnonzero(labels != labels[0])[0])
                raise GraphError(
                    f"disconnected graph: {ncomp} components; unit {self.ids[stray]!r} "
                    f"is unreachable from {self.ids[0]!r}"
                )

    def __eq__(self, other):
        if not isinstance(other, DualGraph):
            return NotImplemented
        return (self.ids, self.pops, self.edges) == (other.ids, other.pops, other.edges)

    def __hash__(self):
        return hash((self.ids, self.pops, self.edges))

    @property
    def n(self) -> int:
        return len(self.ids)

    @cached_property
    def pop_array(self) -> np.ndarray:
        return np.asarray(self.pops, dtype=np.float64)

    @cached_property
    def edge_array(self) -> np.ndarray:
        if not self.edges:
            return np.zeros((0, 2), dtype=np.int64)
        return np.asarray(self.edges, dtype=np.int64)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        n = len(self.ids)
        e = self.edge_array
        data = np.ones(2 * len(e), dtype=np.int8)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        adj = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
        adj.sort_indices()
        return adj

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        adj = self.adjacency
        return adj.indptr.astype(np.int64), adj.indices.astype(np.int64)

    @cached_property
    def neighbors(self) -> list[np.ndarray]:
        adj = self.adjacency
        return [adj.indices[adj.indptr[v]:adj.indptr[v + 1]] for v in range(self.n)]

    @cached_property
    def index(self) -> dict[str, int]:
        return {uid: i for i, uid in enumerate(self.ids)}

    @cached_property
    def hop_distances(self) -> np.ndarray:
        return shortest_path_lengths(self)

    @cached_property
    def fingerprint(self) -> str:
        """Content hash of the graph; stable across processes."""
        return hashlib.sha256(to_json(self).encode()).hexdigest()[:16]

    @property
    def total_pop(self) -> float:
        return float(sum(self.pops))


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    pop: float | Sequence[float] = 1.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise GraphError("grid dimensions must be positive")
        if self.rows * self.cols < 2:
            raise GraphError("grid needs at least 2 cells")
        if not np.isscalar(self.pop) and len(self.pop) != self.rows * self.cols:
            raise GraphError(
                f"per-cell populations: expected {self.rows * self.cols}, got {len(self.pop)}"
            )


def make_grid(spec: GridSpec) -> DualGraph:
    """Row-major 4-neighbour lattice with ids ``r{i}c{j}``."""
    r, c = spec.rows, spec.cols
    ids = tuple(f"r{i}c{j}" for i in range(r) for j in range(c))
    if np.isscalar(spec.pop):
        pops = (float(spec.pop),) * (r * c)
    else:
        pops = tuple(float(p) for p in spec.pop)
    edges = []
    for i in range(r):
        for j in range(c):
            v = i * c + j
            if j + 1 < c:
                edges.append((v, v + 1))
            if i + 1 < r:
                edges.append((v, v + c))
    return DualGraph(ids, pops, tuple(edges))


def grid(rows: int, cols: int, pop: float | Sequence[float] = 1.0) -> DualGraph:
    return make_grid(GridSpec(rows, cols, pop))


def path_graph(pops: Sequence[float], ids: Sequence[str] | None = None) -> DualGraph:
    n = len(pops)
    ids = tuple(ids) if ids is not None else tuple(f"v{i}" for i in range(n))
    return DualGraph(ids, tuple(pops), tuple((i, i + 1) for i in range(n - 1)))


def shortest_path_lengths(g: DualGraph) -> np.ndarray:
    """All-pairs hop counts as an ``n x n`` integer matrix."""
    n = g.n
    out = np.zeros((n, n), dtype=np.int64)
    nbrs = g.neighbors
    for s in range(n):
        dist = np.full(n, -1, dtype=np.int64)
        dist[s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in nbrs[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        out[s] = dist
    return out


def to_json(g: DualGraph) -> str:
    doc = {
        "units": [{"id": uid, "pop": _num(p)} for uid, p in zip(g.ids, g.pops)],
        "edges": [[i, j] for i, j in g.edges],
    }
    return json.dumps(doc, separators=(",", ":"))


def _num(p: float):
    return int(p) if float(p).is_integer() else p


def save_graph(g: DualGraph, path: str | Path) -> None:
    Path(path).write_text(to_json(g) + "\n")


def parse_graph(doc: dict) -> DualGraph:
    if not isinstance(doc, dict) or "units" not in doc or "edges" not in doc:
        raise GraphError("graph JSON must be an object with 'units' and 'edges'")
    ids, pops = [], []
    for pos, unit in enumerate(doc["units"]):
        try:
            uid, pop = unit["id"], unit["pop"]
        except (TypeError, KeyError):
            raise GraphError(f"unit #{pos} must have 'id' and 'pop'") from None
        if not isinstance(uid, str):
            raise GraphError(f"unit #{pos}: id must be a string")
        if isinstance(pop, bool) or not isinstance(pop, (int, float)):
            raise GraphError(f"unit {uid!r}: pop must be a number")
        ids.append(uid)
        pops.append(float(pop))
    edges = []
    for e in doc["edges"]:
        if (not isinstance(e, list) or len(e) != 2
                or not all(isinstance(x, int) and not isinstance(x, bool) for x in e)):
            raise GraphError(f"edge {e!r} must be a pair of integer indices")
        i, j = e
        if i >= j:
            raise GraphError(f"edge {e!r}: indices must satisfy i < j")
        edges.append((i, j))
    return DualGraph(tuple(ids), tuple(pops), tuple(edges))


def load_graph(path: str | Path) -> DualGraph:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphError(f"{path}: parse error: {exc}") from None
    return parse_graph(doc)
