"""Centroid of an ensemble of plans and the linear-time sample medoid.

The centroid entry ``c(i, j)`` is the fraction of accumulated plans that
put units ``i`` and ``j`` in the same district. Counts are kept as exact
integers over unordered pairs ``i < j`` and divided by ``T`` on read.

For any plan ``P`` and ensemble ``A_1..A_T`` with centroid ``c``::

    sum_t d(A_t, P) = sum_t d2(A_t, c) + T * d2(c, P)

so the ensemble member closest to ``c`` in ``d2`` minimises the sum of
distances to the rest of the ensemble, which turns the quadratic medoid
search into one pass over the plans.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from itertools import combinations
from math import lcm
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .districting import Plan, ValidityConfig, enumerate_valid_plans
from .graph import DualGraph
from .metric import ThetaWeights, distance, distance_fast, plan_mass

DENSE_FRACTION = 0.4
# upper bound on entries of the one-hot block built per flush
_BATCH_ENTRIES = 4_000_000


class CentroidError(ValueError):
    pass


class Ensemble(Sequence):
    """Plans stored row-wise as one integer matrix."""

    def __init__(self, assignments, k: int | None = None, graph_ref: str | None = None):
        a = np.asarray(assignments)
        if a.ndim != 2:
            raise ValueError("ensemble assignments must be 2-D (plans x units)")
        self.assignments = a
        self.k = int(a.max()) + 1 if k is None else k
        self.graph_ref = graph_ref

    @classmethod
    def from_plans(cls, plans: Sequence[Plan]) -> "Ensemble":
        if isinstance(plans, Ensemble):
            return plans
        plans = list(plans)
        if not plans:
            raise CentroidError("empty ensemble")
        k = max(p.k for p in plans)
        a = np.stack([p.assignment for p in plans]).astype(_label_dtype(k))
        return cls(a, k, plans[0].graph_ref)

    def __len__(self):
        return self.assignments.shape[0]

    def __getitem__(self, t):
        if isinstance(t, slice):
            return Ensemble(self.assignments[t], self.k, self.graph_ref)
        return Plan(self.assignments[t], graph_ref=self.graph_ref)

    @property
    def n(self) -> int:
        return self.assignments.shape[1]


def _label_dtype(k: int):
    return np.int16 if k < 2**15 else np.int64


class CentroidMatrix:
    """
    Mergeable co-membership counts over unordered unit pairs.

    Starts sparse and switches to a dense upper-triangular array once the
    support exceeds ``DENSE_FRACTION`` of all pairs. Plans are buffered and
    folded in blocks; reads flush the buffer first.
    """

    def __init__(self, n: int, T: int = 0, counts=None, dense_fraction: float = DENSE_FRACTION):
        if n < 1:
            raise CentroidError("n must be positive")
        self.n = n
        self.dense_fraction = dense_fraction
        self._T = T
        self._buffer: list[np.ndarray] = []
        if counts is None:
            counts = sp.csr_matrix((n, n), dtype=np.int64)
        self._counts = counts
        self._maybe_densify()

    # construction -------------------------------------------------------

    @classmethod
    def from_pairs(cls, n: int, T: int, rows, cols, counts) -> "CentroidMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        counts = np.asarray(counts)
        if rows.size and ((rows >= cols).any() or rows.min() < 0 or cols.max() >= n):
            raise CentroidError("pairs must satisfy 0 <= i < j < n")
        if counts.size and (counts.min() < 0 or counts.max() > T):
            raise CentroidError("pair counts must lie in [0, T]")
        mat = sp.csr_matrix((counts, (rows, cols)), shape=(n, n))
        mat.sum_duplicates()
        return cls(n, T, mat)

    def add(self, plan) -> "CentroidMatrix":
        a = plan.assignment if isinstance(plan, Plan) else np.asarray(plan)
        if a.shape != (self.n,):
            raise CentroidError(f"plan has {a.size} units, centroid expects {self.n}")
        self._buffer.append(np.asarray(a))
        self._T += 1
        if len(self._buffer) * self.n * (int(a.max()) + 1) >= _BATCH_ENTRIES:
            self.flush()
        return self

    def add_many(self, plans) -> "CentroidMatrix":
        if isinstance(plans, Ensemble):
            self.flush()
            step = max(1, _BATCH_ENTRIES // (self.n * plans.k))
            for s in range(0, len(plans), step):
                block = plans.assignments[s:s + step]
                self._fold(block)
                self._T += block.shape[0]
            return self
        for p in plans:
            self.add(p)
        return self

    def flush(self) -> None:
        if not self._buffer:
            return
        block = np.stack(self._buffer)
        self._buffer = []
        self._fold(block)

    def _fold(self, block: np.ndarray) -> None:
        B, n = block.shape
        k = int(block.max()) + 1
        cols = (np.arange(B)[:, None] * k + block).reshape(-1)
        rows = np.tile(np.arange(n), B)
        if isinstance(self._counts, np.ndarray):
            onehot = np.zeros((n, B * k))
            onehot[rows, cols] = 1.0
            co = onehot @ onehot.T
            self._counts += np.triu(np.rint(co).astype(np.int64), 1)
        else:
            onehot = sp.csr_matrix((np.ones(rows.size, dtype=np.int64), (rows, cols)),
                                   shape=(n, B * k))
            co = sp.triu(onehot @ onehot.T, k=1, format="csr")
            self._counts = (self._counts + co).tocsr()
            self._maybe_densify()

    def _maybe_densify(self):
        if isinstance(self._counts, np.ndarray):
            return
        pairs = self.n * (self.n - 1) / 2
        if pairs and self._counts.nnz > self.dense_fraction * pairs:
            self._counts = np.triu(self._counts.toarray().astype(np.int64), 1)

    # reads --------------------------------------------------------------

    @property
    def T(self) -> int:
        return self._T

    @property
    def is_dense(self) -> bool:
        self.flush()
        return isinstance(self._counts, np.ndarray)

    def pairs(self):
        """``(rows, cols, counts)`` of the support, sorted lexicographically."""
        self.flush()
        if isinstance(self._counts, np.ndarray):
            rows, cols = np.nonzero(self._counts)
            return rows.astype(np.int64), cols.astype(np.int64), self._counts[rows, cols]
        coo = self._counts.tocoo()
        keep = coo.data != 0
        r, c, v = coo.row[keep], coo.col[keep], coo.data[keep]
        order = np.lexsort((c, r))
        return r[order].astype(np.int64), c[order].astype(np.int64), v[order]

    @property
    def support_size(self) -> int:
        return int(self.pairs()[0].size)

    def count(self, i: int, j: int):
        self.flush()
        if i == j:
            return self._T
        i, j = min(i, j), max(i, j)
        return self._counts[i, j]

    def value(self, i: int, j: int) -> float:
        if self._T == 0:
            raise CentroidError("centroid of an empty ensemble")
        return float(self.count(i, j) / self._T)

    def dense_counts(self) -> np.ndarray:
        """Symmetric count matrix with ``T`` on the diagonal."""
        self.flush()
        up = self._counts if isinstance(self._counts, np.ndarray) else self._counts.toarray()
        full = up + up.T
        np.fill_diagonal(full, self._T)
        return full

    def dense_values(self) -> np.ndarray:
        if self._T == 0:
            raise CentroidError("centroid of an empty ensemble")
        return self.dense_counts() / self._T

    def __eq__(self, other):
        if not isinstance(other, CentroidMatrix):
            return NotImplemented
        if (self.n, self.T) != (other.n, other.T):
            return False
        a, b = self.pairs(), other.pairs()
        return all(np.array_equal(x, y) for x, y in zip(a, b))

    def __repr__(self):
        return f"CentroidMatrix(n={self.n}, T={self.T}, support={self.support_size})"

    def copy(self) -> "CentroidMatrix":
        self.flush()
        counts = self._counts.copy()
        return CentroidMatrix(self.n, self._T, counts, self.dense_fraction)


def accumulate(acc: CentroidMatrix, plan: Plan) -> CentroidMatrix:
    return acc.add(plan)


def centroid_of(plans, n: int | None = None) -> CentroidMatrix:
    ens = Ensemble.from_plans(plans)
    return CentroidMatrix(n or ens.n).add_many(ens)


def merge(a: CentroidMatrix, b: CentroidMatrix) -> CentroidMatrix:
    """Centroid of the concatenated ensembles; counts and ``T`` add."""
    if a.n != b.n:
        raise CentroidError(f"cannot merge centroids over {a.n} and {b.n} units")
    a.flush()
    b.flush()
    ca, cb = a._counts, b._counts
    if isinstance(ca, np.ndarray) or isinstance(cb, np.ndarray):
        ca = ca if isinstance(ca, np.ndarray) else ca.toarray()
        cb = cb if isinstance(cb, np.ndarray) else cb.toarray()
        counts = ca + cb
    else:
        counts = (ca + cb).tocsr()
    return CentroidMatrix(a.n, a.T + b.T, counts, a.dense_fraction)


# distances against a centroid ------------------------------------------

def _support_values(acc: CentroidMatrix, weights: ThetaWeights, g: DualGraph):
    rows, cols, counts = acc.pairs()
    c = counts / acc.T
    th = weights.pairs(g, rows, cols)
    return rows, cols, c, th


def plan_centroid_distance_sq(plan: Plan, acc: CentroidMatrix, weights: ThetaWeights,
                              g: DualGraph) -> float:
    """
    ``d2(plan, centroid)`` without materialising all pairs.

    Support pairs contribute ``theta * (A - c)**2``; same-district pairs
    outside the support contribute ``theta``. Rearranged as
    ``sum_support theta c^2 + mass(plan) - 2 sum_{support, same} theta c``.
    """
    plan.check(g)
    if acc.n != g.n:
        raise CentroidError("centroid and graph differ in size")
    if acc.T == 0:
        raise CentroidError("centroid of an empty ensemble")
    rows, cols, c, th = _support_values(acc, weights, g)
    a = plan.assignment
    same = a[rows] == a[cols]
    value = (th * c * c).sum() + plan_mass(plan, weights, g) - 2.0 * (th[same] * c[same]).sum()
    return max(0.0, float(value))


def centroid_distance_sq(a: CentroidMatrix, b: CentroidMatrix, weights: ThetaWeights,
                         g: DualGraph) -> float:
    if a.n != b.n or a.n != g.n:
        raise CentroidError("centroids and graph differ in size")
    ra, ca_, va = a.pairs()
    rb, cb_, vb = b.pairs()
    ma = sp.csr_matrix((va / a.T, (ra, ca_)), shape=(a.n, a.n))
    mb = sp.csr_matrix((vb / b.T, (rb, cb_)), shape=(b.n, b.n))
    diff = (ma - mb).tocoo()
    th = weights.pairs(g, diff.row, diff.col)
    return float((th * diff.data * diff.data).sum())


class _DenseScorer:
    """``d2(plan, c) = K + sum over same-district pairs of W``, ``W = theta (1 - 2c)``."""

    def __init__(self, acc: CentroidMatrix, weights: ThetaWeights, g: DualGraph):
        c = acc.dense_values()
        th = weights.dense(g)
        np.fill_diagonal(c, 0.0)
        np.fill_diagonal(th, 0.0)
        self.K = float(np.triu(th * c * c, 1).sum())
        self.W = th * (1.0 - 2.0 * c)
        np.fill_diagonal(self.W, 0.0)

    def batch(self, block: np.ndarray, k: int) -> np.ndarray:
        B, n = block.shape
        onehot = np.zeros((n, B * k))
        onehot[np.tile(np.arange(n), B), (np.arange(B)[:, None] * k + block).reshape(-1)] = 1.0
        quad = (onehot * (self.W @ onehot)).sum(axis=0).reshape(B, k).sum(axis=1)
        return np.maximum(self.K + 0.5 * quad, 0.0)


def distances_to_centroid(plans, acc: CentroidMatrix, weights: ThetaWeights, g: DualGraph,
                          threads: int = 1, dense_limit: int = 5000) -> np.ndarray:
    """``d2(A_t, centroid)`` for every plan, in order. Linear in the number of plans."""
    ens = Ensemble.from_plans(plans)
    if ens.n != g.n or acc.n != g.n:
        raise CentroidError("ensemble, centroid and graph differ in size")
    if acc.T == 0:
        raise CentroidError("centroid of an empty ensemble")
    if g.n <= dense_limit:
        scorer = _DenseScorer(acc, weights, g)
        k = ens.k
        step = max(1, _BATCH_ENTRIES // (g.n * k))
        blocks = [ens.assignments[s:s + step] for s in range(0, len(ens), step)]
        if threads > 1 and len(blocks) > 1:
            with ThreadPoolExecutor(threads) as pool:
                parts = list(pool.map(lambda b: scorer.batch(b, k), blocks))
        else:
            parts = [scorer.batch(b, k) for b in blocks]
        return np.concatenate(parts)
    return np.array([plan_centroid_distance_sq(p, acc, weights, g) for p in ens])


class MedoidResult(NamedTuple):
    plan: Plan
    d2: float
    index: int


def sample_medoid(ensemble, acc: CentroidMatrix, weights: ThetaWeights, g: DualGraph,
                  threads: int = 1) -> MedoidResult:
    """Ensemble member nearest the centroid; ties go to the earliest index."""
    ens = Ensemble.from_plans(ensemble)
    if len(ens) == 0:
        raise CentroidError("empty ensemble")
    d2 = distances_to_centroid(ens, acc, weights, g, threads=threads)
    best = int(np.argmin(d2))
    return MedoidResult(ens[best], float(d2[best]), best)


def argmin_set(values, rtol: float = 1e-9) -> set[int]:
    values = np.asarray(values, dtype=np.float64)
    lo = values.min()
    tol = rtol * max(abs(lo), np.abs(values).max(), 1.0)
    return set(np.flatnonzero(values <= lo + tol).tolist())


def sample_medoid_set(ensemble, acc, weights, g, rtol: float = 1e-9) -> set[int]:
    """Indices whose centroid distance ties the minimum within ``rtol``."""
    return argmin_set(distances_to_centroid(ensemble, acc, weights, g), rtol)


def pairwise_medoid_set(ensemble, weights: ThetaWeights, g: DualGraph,
                        rtol: float = 1e-9) -> set[int]:
    """Brute-force ``O(T^2)`` medoid: argmin of summed distances to all members."""
    ens = Ensemble.from_plans(ensemble)
    plans = list(ens)
    pick = distance_fast if weights.factorizable else distance
    T = len(plans)
    sums = np.zeros(T)
    for s in range(T):
        for t in range(s + 1, T):
            d = pick(plans[s], plans[t], weights, g)
            sums[s] += d
            sums[t] += d
    return argmin_set(sums, rtol)


class DecompositionCheck(NamedTuple):
    lhs: float
    rhs: float
    residual: float


def decomposition_check(ensemble, acc: CentroidMatrix, probe: Plan, weights: ThetaWeights,
                        g: DualGraph) -> DecompositionCheck:
    """
    Compare summed plan distances to the spread-plus-offset form of the same sum.

    The residual is relative to the larger side. Differences below rounding
    noise of the weight total (``T * sum theta`` times a few ulps) count as
    zero, so an ensemble of copies of the probe reports 0 rather than 1.
    """
    ens = Ensemble.from_plans(ensemble)
    pick = distance_fast if weights.factorizable else distance
    lhs = math.fsum(pick(p, probe, weights, g) for p in ens)
    spread = distances_to_centroid(ens, acc, weights, g)
    rhs = math.fsum(spread) + acc.T * plan_centroid_distance_sq(probe, acc, weights, g)
    noise = 64 * np.finfo(float).eps * acc.T * _pair_weight_total(weights, g)
    gap = abs(lhs - rhs)
    scale = max(abs(lhs), abs(rhs))
    residual = 0.0 if gap <= noise or scale == 0 else gap / scale
    return DecompositionCheck(lhs, rhs, residual)


def _pair_weight_total(weights: ThetaWeights, g: DualGraph) -> float:
    if weights.factorizable:
        f = weights.factor(g)
        return float((f.sum() ** 2 - (f * f).sum()) / 2)
    return float(np.triu(weights.dense(g), 1).sum())


def mean_spread(acc: CentroidMatrix, weights: ThetaWeights, g: DualGraph) -> float:
    """
    Mean ``d2(A_t, centroid)`` over the accumulated plans, from counts alone.

    ``sum_t d2(A_t, c) = sum_t mass(A_t) - T * sum theta c^2`` and
    ``sum_t mass(A_t) = T * sum theta c``, so the mean is ``sum theta c (1 - c)``.
    """
    if acc.T == 0:
        raise CentroidError("centroid of an empty ensemble")
    _, _, c, th = _support_values(acc, weights, g)
    return float((th * c * (1.0 - c)).sum())


def mean_spread_pass(ensemble, acc: CentroidMatrix, weights: ThetaWeights,
                     g: DualGraph) -> float:
    """Same quantity as :func:`mean_spread` by a second pass over the plans."""
    return float(np.mean(distances_to_centroid(ensemble, acc, weights, g)))


def avg_ensemble_distance(probe: Plan, acc: CentroidMatrix, spread: float,
                          weights: ThetaWeights, g: DualGraph) -> float:
    """Mean distance from ``probe`` to the ensemble behind ``acc``."""
    return plan_centroid_distance_sq(probe, acc, weights, g) + spread


def exact_population_centroid(g: DualGraph, k: int, cfg: ValidityConfig, dist,
                              plans: Sequence[Plan] | None = None) -> CentroidMatrix:
    """
    Centroid of a distribution over the enumerated valid plans.

    ``dist`` lists one probability per plan of ``enumerate_valid_plans``
    (or of ``plans`` when given), or maps plans to probabilities. Rational
    inputs (``Fraction``/``int``) give exact counts over their common
    denominator; float inputs are scaled by ``2**52`` and rounded, with ``T``
    the sum of the scaled weights.
    """
    if plans is None:
        plans = enumerate_valid_plans(g, k, cfg)
    if isinstance(dist, dict):
        index = {p: t for t, p in enumerate(plans)}
        probs = [0] * len(plans)
        for p, q in dist.items():
            if p not in index:
                raise CentroidError("distribution puts mass on a plan outside the valid set")
            probs[index[p]] = q
    else:
        probs = list(dist)
        if len(probs) != len(plans):
            raise CentroidError(f"expected {len(plans)} probabilities, got {len(probs)}")
    if any(q < 0 for q in probs):
        raise CentroidError("negative probability")
    if all(isinstance(q, (int, Fraction)) for q in probs):
        fr = [Fraction(q) for q in probs]
        if sum(fr) != 1:
            raise CentroidError(f"probabilities sum to {sum(fr)}, not 1")
        denom = lcm(*(q.denominator for q in fr)) if fr else 1
        weights = [int(q * denom) for q in fr]
    else:
        total = math.fsum(float(q) for q in probs)
        if abs(total - 1.0) > 1e-12:
            raise CentroidError(f"probabilities sum to {total!r}, not 1")
        denom = 2**52
        weights = [int(round(float(q) * denom)) for q in probs]
        denom = sum(weights)
    if denom > 2**62:
        raise CentroidError("common denominator of the probabilities is too large")
    keyed: dict[tuple[int, int], int] = {}
    for p, wgt in zip(plans, weights):
        if wgt == 0:
            continue
        for idx in p.districts:
            for pair in combinations(sorted(idx.tolist()), 2):
                keyed[pair] = keyed.get(pair, 0) + wgt
    keys = sorted(keyed)
    return CentroidMatrix.from_pairs(g.n, denom, [a for a, _ in keys], [b for _, b in keys],
                                     np.array([keyed[key] for key in keys], dtype=np.int64))


def required_samples(epsilon: float, delta: float, n: int) -> int:
    """Samples for every centroid entry to be within ``epsilon`` w.p. ``1 - delta``."""
    _check_bound_args(epsilon, delta, n)
    return max(1, math.ceil(math.log(n / delta) / epsilon**2))


def required_samples_dsq(epsilon: float, delta: float, n: int, kappa: float) -> int:
    """Samples for ``d2(sample centroid, population centroid) <= epsilon`` w.p. ``1 - delta``."""
    _check_bound_args(epsilon, delta, n)
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    return max(1, math.ceil(kappa * n * n / epsilon * math.log(n / delta)))


def _check_bound_args(epsilon, delta, n):
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if n < 2:
        raise ValueError("n must be at least 2")


# file format -------------------------------------------------------------

def save_centroid(acc: CentroidMatrix, path: str | Path) -> None:
    rows, cols, counts = acc.pairs()
    with open(path, "w") as fh:
        fh.write(f"# n={acc.n} T={acc.T}\n")
        for i, j, c in zip(rows.tolist(), cols.tolist(), counts.tolist()):
            fh.write(f"{i},{j},{c}\n")


def load_centroid(path: str | Path) -> CentroidMatrix:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CentroidError(f"{path}: line 1: empty file")
    head = lines[0].split()
    try:
        if head[0] != "#" or len(head) != 3:
            raise ValueError
        n = int(head[1].removeprefix("n="))
        T = int(head[2].removeprefix("T="))
        if not head[1].startswith("n=") or not head[2].startswith("T="):
            raise ValueError
    except (ValueError, IndexError):
        raise CentroidError(f"{path}: line 1: expected header '# n=<n> T=<T>'") from None
    rows, cols, counts = [], [], []
    prev = (-1, -1)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            i, j, c = (int(x) for x in line.split(","))
        except ValueError:
            raise CentroidError(f"{path}: line {lineno}: expected 'i,j,count'") from None
        if not (0 <= i < j < n) or not (0 < c <= T) or (i, j) <= prev:
            raise CentroidError(f"{path}: line {lineno}: bad or out-of-order entry {line!r}")
        prev = (i, j)
        rows.append(i)
        cols.append(j)
        counts.append(c)
    return CentroidMatrix.from_pairs(n, T, rows, cols, np.array(counts, dtype=np.int64))
