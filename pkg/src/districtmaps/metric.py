"""Pair-weighted distances between districting plans.

A plan is identified with its co-membership matrix ``A`` (``A[i, j] = 1``
when units ``i`` and ``j`` share a district). For pair weights ``theta``
the distance is the weighted count of unit pairs on which two plans
disagree; the squared variant replaces ``|x - y|`` by ``(x - y)**2`` and
extends to fractional (centroid) operands. Both sum over unordered pairs
``i < j``, which equals half the sum over ordered pairs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .districting import Plan, same_graph
from .graph import DualGraph

KINDS = ("unweighted", "pop", "pathdecay", "explicit")


class ThetaError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ThetaWeights:
    """
    Positive symmetric pair weights.

    ``unweighted`` gives 1 everywhere, ``pop`` gives ``w(i) * w(j)``,
    ``pathdecay`` gives ``exp(-rate * hops(i, j))`` and ``explicit`` reads an
    ``n x n`` matrix. Diagonal entries are fixed to 1 and never contribute.
    """

    kind: str = "unweighted"
    rate: float = 1.0
    matrix: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ThetaError(f"unknown theta kind {self.kind!r}")
        if self.kind == "pathdecay" and not self.rate > 0:
            raise ThetaError("path-decay rate must be positive")
        if self.kind == "explicit":
            if self.matrix is None:
                raise ThetaError("explicit theta needs a matrix")
            m = np.array(self.matrix, dtype=np.float64)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ThetaError("explicit theta must be a square matrix")
            if not np.allclose(m, m.T, rtol=0, atol=0):
                raise ThetaError("explicit theta must be symmetric")
            off = ~np.eye(m.shape[0], dtype=bool)
            if not (m[off] > 0).all():
                raise ThetaError("explicit theta must be positive off the diagonal")
            np.fill_diagonal(m, 1.0)
            m.setflags(write=False)
            object.__setattr__(self, "matrix", m)

    @classmethod
    def unweighted(cls):
        return cls("unweighted")

    @classmethod
    def population(cls):
        return cls("pop")

    @classmethod
    def path_decay(cls, rate: float = 1.0):
        return cls("pathdecay", rate=rate)

    @classmethod
    def explicit(cls, matrix):
        return cls("explicit", matrix=np.asarray(matrix, dtype=np.float64))

    @property
    def label(self) -> str:
        if self.kind == "pathdecay":
            return f"pathdecay:{self.rate!r}"
        return self.kind

    @property
    def factorizable(self) -> bool:
        return self.kind in ("unweighted", "pop")

    def factor(self, g: DualGraph) -> np.ndarray:
        """Per-unit factor ``f`` with ``theta(i, j) = f[i] * f[j]``."""
        if self.kind == "unweighted":
            return np.ones(g.n)
        if self.kind == "pop":
            return g.pop_array
        raise ThetaError(f"theta kind {self.kind!r} does not factor per unit")

    def pairs(self, g: DualGraph, rows, cols) -> np.ndarray:
        """Vectorised ``theta(rows[t], cols[t])`` for off-diagonal index arrays."""
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        if self.kind == "unweighted":
            return np.ones(rows.shape)
        if self.kind == "pop":
            w = g.pop_array
            return w[rows] * w[cols]
        if self.kind == "pathdecay":
            return np.exp(-self.rate * g.hop_distances[rows, cols])
        self._check_size(g)
        return self.matrix[rows, cols]

    def dense(self, g: DualGraph) -> np.ndarray:
        """Full ``n x n`` weight matrix with unit diagonal."""
        if self.kind == "unweighted":
            return np.ones((g.n, g.n))
        if self.kind == "pop":
            w = g.pop_array
            return np.outer(w, w)
        if self.kind == "pathdecay":
            return np.exp(-self.rate * g.hop_distances.astype(np.float64))
        self._check_size(g)
        return np.array(self.matrix)

    def kappa(self, g: DualGraph) -> float:
        """Largest ``sqrt(theta(i, j))`` over distinct pairs."""
        if g.n < 2:
            raise ThetaError("kappa needs at least two units")
        if self.kind == "unweighted":
            return 1.0
        if self.kind == "pop":
            top = np.sort(g.pop_array)[-2:]
            return math.sqrt(top[0] * top[1])
        m = self.dense(g)
        np.fill_diagonal(m, -np.inf)
        return math.sqrt(m.max())

    def _check_size(self, g: DualGraph):
        if self.matrix.shape[0] != g.n:
            raise ThetaError(f"explicit theta is {self.matrix.shape[0]}x{self.matrix.shape[0]}, "
                             f"graph has {g.n} units")


def parse_theta(text: str) -> ThetaWeights:
    """Parse ``unweighted``, ``pop``, ``pathdecay:<rate>`` or ``explicit:<csv file>``."""
    kind, _, arg = text.partition(":")
    if kind == "unweighted" and not arg:
        return ThetaWeights.unweighted()
    if kind == "pop" and not arg:
        return ThetaWeights.population()
    if kind == "pathdecay":
        try:
            return ThetaWeights.path_decay(float(arg) if arg else 1.0)
        except ValueError:
            raise ThetaError(f"bad path-decay rate {arg!r}") from None
    if kind == "explicit" and arg:
        return ThetaWeights.explicit(np.loadtxt(Path(arg), delimiter=",", ndmin=2))
    raise ThetaError(f"unrecognised theta spec {text!r}")


def theta(weights: ThetaWeights, g: DualGraph, i: int, j: int) -> float:
    if i == j:
        raise ThetaError("theta is defined for distinct units only")
    return float(weights.pairs(g, np.array([i]), np.array([j]))[0])


def _upper(n: int):
    return np.triu_indices(n, 1)


def distance(p1: Plan, p2: Plan, weights: ThetaWeights, g: DualGraph) -> float:
    """Weighted count of unit pairs co-districted in exactly one of the plans."""
    same_graph(p1, p2)
    p1.check(g)
    rows, cols = _upper(g.n)
    a1, a2 = p1.assignment, p2.assignment
    s1 = a1[rows] == a1[cols]
    s2 = a2[rows] == a2[cols]
    diff = s1 != s2
    return float(weights.pairs(g, rows[diff], cols[diff]).sum())


def _pair_mass(labels: np.ndarray, f: np.ndarray) -> float:
    # weight of same-group pairs when theta factors: (S^2 - Q) / 2 per group
    S = np.bincount(labels, weights=f)
    Q = np.bincount(labels, weights=f * f)
    return math.fsum((S * S - Q) / 2.0)


def plan_mass(plan: Plan, weights: ThetaWeights, g: DualGraph) -> float:
    """Total weight of same-district pairs of ``plan``."""
    if weights.factorizable:
        return _pair_mass(plan.assignment, weights.factor(g))
    th = weights.dense(g)
    total = 0.0
    for idx in plan.districts:
        block = th[np.ix_(idx, idx)]
        total += (block.sum() - np.trace(block)) / 2.0
    return total


def _cross_mass(groups: np.ndarray, sums: np.ndarray) -> float:
    # sum over groups of sum_{a < b} S_a S_b for the cells in the group;
    # ascending prefix sums keep every term nonnegative (no cancellation)
    terms = []
    order = np.lexsort((sums, groups))
    g_sorted, s_sorted = groups[order].tolist(), sums[order].tolist()
    prev, acc = None, 0.0
    for g, x in zip(g_sorted, s_sorted):
        if g != prev:
            prev, acc = g, 0.0
        terms.append(acc * x)
        acc += x
    return math.fsum(terms)


def distance_fast(p1: Plan, p2: Plan, weights: ThetaWeights, g: DualGraph) -> float:
    """
    Same value as :func:`distance` from district-intersection aggregates.

    A disagreeing pair shares a district in one plan and lies in two
    different cells of the intersection. With ``S_c`` the factor total of
    cell ``c`` the distance is the sum, over both plans' districts, of
    ``S_a * S_b`` over pairs of cells inside the district. Runs in
    ``O(n + k1 * k2)``; only for weights that factor per unit.
    """
    if not weights.factorizable:
        raise ThetaError(f"distance_fast does not support theta kind {weights.kind!r}")
    same_graph(p1, p2)
    p1.check(g)
    f = weights.factor(g)
    a1, a2 = p1.assignment, p2.assignment
    k2 = int(a2.max()) + 1
    cells, inverse = np.unique(a1 * k2 + a2, return_inverse=True)
    S = np.bincount(inverse.reshape(-1), weights=f)
    return _cross_mass(cells // k2, S) + _cross_mass(cells % k2, S)


def _as_matrix(x, n: int) -> np.ndarray:
    if isinstance(x, Plan):
        return x.comembership().astype(np.float64)
    m = np.asarray(x, dtype=np.float64)
    if m.shape != (n, n):
        raise ValueError(f"matrix operand must be {n}x{n}")
    return m


def distance_sq(x1, x2, weights: ThetaWeights, g: DualGraph) -> float:
    """
    Squared-difference distance between plans, centroids or raw matrices.

    Equals :func:`distance` when both operands are plans. Plan/centroid
    pairs are evaluated from the centroid's sparse support.
    """
    from .centroid import CentroidMatrix, centroid_distance_sq, plan_centroid_distance_sq

    if isinstance(x1, Plan) and isinstance(x2, Plan):
        same_graph(x1, x2)
        x1.check(g)
        rows, cols = _upper(g.n)
        a1, a2 = x1.assignment, x2.assignment
        d = (a1[rows] == a1[cols]).astype(np.float64) - (a2[rows] == a2[cols])
        return float((weights.pairs(g, rows, cols) * d * d).sum())
    if isinstance(x1, CentroidMatrix) and isinstance(x2, Plan):
        x1, x2 = x2, x1
    if isinstance(x1, Plan) and isinstance(x2, CentroidMatrix):
        return plan_centroid_distance_sq(x1, x2, weights, g)
    if isinstance(x1, CentroidMatrix) and isinstance(x2, CentroidMatrix):
        return centroid_distance_sq(x1, x2, weights, g)
    if isinstance(x1, CentroidMatrix):
        x1 = x1.dense_values()
    if isinstance(x2, CentroidMatrix):
        x2 = x2.dense_values()
    m1 = _as_matrix(x1, g.n)
    m2 = _as_matrix(x2, g.n)
    rows, cols = _upper(g.n)
    d = m1[rows, cols] - m2[rows, cols]
    return float((weights.pairs(g, rows, cols) * d * d).sum())
