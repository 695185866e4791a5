"""Districting plans, validity rules and seed-plan generation."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .graph import DualGraph
from .trees import balanced_split

DEFAULT_EPS = 0.05
ENUMERATION_LIMIT = 16
# float slack when comparing district populations against the bounds
_REL_SLACK = 1e-12


class PlanError(ValueError):
    """A plan is malformed or does not belong to the graph it is used with."""


class SeedPlanError(RuntimeError):
    pass


class EnumerationGuardError(ValueError):
    pass


def canonical_labels(assignment) -> np.ndarray:
    """Relabel districts by order of first appearance."""
    a = np.asarray(assignment)
    _, first, inverse = np.unique(a, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first)] = np.arange(first.size)
    return rank[inverse.reshape(-1)]


class Plan:
    """
    Assignment of every unit to one of ``k`` nonempty districts.

    Equality and hashing follow the partition, not the labels: two plans
    that differ only by a renaming of districts compare equal.
    """

    def __init__(self, assignment, k: int | None = None, graph_ref: str | None = None):
        a = np.array(assignment, dtype=np.int64).reshape(-1)
        if a.size == 0:
            raise PlanError("empty assignment")
        if k is None:
            k = int(a.max()) + 1 if a.min() >= 0 else 0
        if a.min() < 0 or a.max() >= k:
            raise PlanError(f"district labels must lie in [0, {k})")
        present = np.bincount(a, minlength=k)
        if (present == 0).any():
            missing = np.flatnonzero(present == 0).tolist()
            raise PlanError(f"empty district(s) {missing}")
        a.setflags(write=False)
        self.assignment = a
        self.k = int(k)
        self.graph_ref = graph_ref

    @property
    def n(self) -> int:
        return self.assignment.size

    @cached_property
    def canonical(self) -> np.ndarray:
        c = canonical_labels(self.assignment)
        c.setflags(write=False)
        return c

    def canonicalized(self) -> "Plan":
        return Plan(self.canonical, self.k, self.graph_ref)

    @cached_property
    def districts(self) -> list[np.ndarray]:
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.cumsum(np.bincount(self.assignment, minlength=self.k))[:-1]
        return np.split(order, bounds)

    def comembership(self) -> np.ndarray:
        """Dense boolean co-membership matrix (small graphs only)."""
        a = self.assignment
        return a[:, None] == a[None, :]

    def check(self, g: DualGraph) -> None:
        if self.n != g.n:
            raise PlanError(f"plan has {self.n} units but graph has {g.n}")
        if self.graph_ref is not None and self.graph_ref != g.fingerprint:
            raise PlanError("plan was built for a different graph")

    def __eq__(self, other):
        if not isinstance(other, Plan):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.canonical, other.canonical)

    def __hash__(self):
        return hash(self.canonical.tobytes())

    def __repr__(self):
        return f"Plan(k={self.k}, n={self.n}, assignment={self.canonical.tolist()})"


def same_graph(p1: Plan, p2: Plan) -> None:
    if p1.n != p2.n:
        raise PlanError(f"plans cover different unit counts ({p1.n} vs {p2.n})")
    if p1.graph_ref and p2.graph_ref and p1.graph_ref != p2.graph_ref:
        raise PlanError("plans belong to different graphs")


@dataclass(frozen=True)
class ValidityConfig:
    pop_tolerance: float = DEFAULT_EPS
    max_cut_edges: int | None = None

    def __post_init__(self):
        if self.pop_tolerance < 0:
            raise ValueError("pop_tolerance must be nonnegative")
        if self.max_cut_edges is not None and self.max_cut_edges < 1:
            raise ValueError("max_cut_edges must be a positive integer")

    def bounds(self, g: DualGraph, k: int) -> tuple[float, float]:
        ideal = g.total_pop / k
        slack = _REL_SLACK * ideal
        return (1 - self.pop_tolerance) * ideal - slack, (1 + self.pop_tolerance) * ideal + slack


class PopulationBalance(NamedTuple):
    totals: np.ndarray
    ideal: float
    deviation: float


class Validity(NamedTuple):
    ok: bool
    rule: str | None = None
    detail: str = ""

    def __bool__(self):
        return self.ok


def is_contiguous(plan: Plan, g: DualGraph) -> bool:
    plan.check(g)
    a = plan.assignment
    adj = g.adjacency.tocoo()
    keep = a[adj.row] == a[adj.col]
    inside = sp.csr_matrix((adj.data[keep], (adj.row[keep], adj.col[keep])), shape=adj.shape)
    # each district contributes at least one component
    ncomp, _ = connected_components(inside, directed=False)
    return ncomp == plan.k


def population_balance(plan: Plan, g: DualGraph) -> PopulationBalance:
    plan.check(g)
    totals = np.bincount(plan.assignment, weights=g.pop_array, minlength=plan.k)
    ideal = g.total_pop / plan.k
    deviation = float(np.max(np.abs(totals - ideal)) / ideal)
    return PopulationBalance(totals, ideal, deviation)


def cut_edges(plan: Plan, g: DualGraph) -> int:
    plan.check(g)
    e = g.edge_array
    if len(e) == 0:
        return 0
    a = plan.assignment
    return int(np.count_nonzero(a[e[:, 0]] != a[e[:, 1]]))


def is_valid(plan: Plan, g: DualGraph, cfg: ValidityConfig = ValidityConfig()) -> Validity:
    """Check nonempty districts, contiguity, population and the optional cut cap, in order."""
    plan.check(g)
    if np.bincount(plan.assignment, minlength=plan.k).min() == 0:
        return Validity(False, "nonempty")
    if not is_contiguous(plan, g):
        return Validity(False, "contiguity")
    bal = population_balance(plan, g)
    lo, hi = cfg.bounds(g, plan.k)
    if bal.totals.min() < lo or bal.totals.max() > hi:
        return Validity(False, "population",
                        f"deviation {bal.deviation:.6g} exceeds {cfg.pop_tolerance:g}")
    if cfg.max_cut_edges is not None:
        cuts = cut_edges(plan, g)
        if cuts > cfg.max_cut_edges:
            return Validity(False, "compactness", f"{cuts} cut edges > {cfg.max_cut_edges}")
    return Validity(True)


def seed_plan(g: DualGraph, k: int, cfg: ValidityConfig = ValidityConfig(),
              rng_seed: int = 0, max_attempts: int = 1000, tries_per_split: int = 50) -> Plan:
    """
    Valid starting plan by recursive spanning-tree bipartition.

    Each round cuts one district of admissible population off the
    remaining units; the remainder must stay divisible into the districts
    still to be drawn. Deterministic for a given ``rng_seed``.
    """
    if k < 1:
        raise PlanError("k must be at least 1")
    if k > g.n:
        raise PlanError(f"cannot draw {k} nonempty districts from {g.n} units")
    rng = np.random.default_rng(rng_seed)
    lo, hi = cfg.bounds(g, k)
    for attempt in range(1, max_attempts + 1):
        assignment = np.full(g.n, -1, dtype=np.int64)
        remaining = np.arange(g.n)
        ok = True
        for d in range(k - 1):
            left = k - d - 1
            _, side = balanced_split(g, remaining, (lo, hi), (left * lo, left * hi),
                                     rng, tries_per_split)
            if side is None:
                ok = False
                break
            assignment[side] = d
            remaining = np.flatnonzero(assignment < 0)
        if not ok:
            continue
        assignment[remaining] = k - 1
        plan = Plan(assignment, k, g.fingerprint)
        if is_valid(plan, g, cfg):
            return plan
    raise SeedPlanError(f"no valid {k}-district plan found after {max_attempts} attempts")


def _connected_sets(nbrs, allowed: set, start: int, pops, cap: float) -> Iterator[frozenset]:
    # each connected superset of {start} inside `allowed` is produced once:
    # a branch that adds ext[idx] forbids ext[:idx]
    def rec(S, pop, ext, forb):
        yield S
        for idx, u in enumerate(ext):
            new_pop = pop + pops[u]
            if new_pop > cap:
                continue
            new_forb = forb | set(ext[:idx])
            tail = ext[idx + 1:]
            seen = set(tail) | new_forb | S
            grown = [w for w in nbrs[u] if w in allowed and w != u and w not in seen]
            yield from rec(S | {u}, new_pop, tail + sorted(set(grown)), new_forb)

    if pops[start] > cap:
        return
    first = sorted(w for w in nbrs[start] if w in allowed and w != start)
    yield from rec(frozenset([start]), pops[start], first, frozenset([start]))


def enumerate_valid_plans(g: DualGraph, k: int, cfg: ValidityConfig = ValidityConfig(),
                          limit: int = ENUMERATION_LIMIT) -> list[Plan]:
    """
    Every valid plan of ``g`` into ``k`` districts, each listed once.

    Districts are opened in order of their smallest unit, so labels come
    out canonical. Exponential; guarded by ``limit`` on the unit count.
    """
    if g.n > limit:
        raise EnumerationGuardError(f"enumeration limited to n <= {limit}, graph has {g.n}")
    if k < 1 or k > g.n:
        return []
    lo, hi = cfg.bounds(g, k)
    pops = [float(p) for p in g.pops]
    nbrs = [set(int(x) for x in row) for row in g.neighbors]
    out: list[Plan] = []
    assignment = [-1] * g.n

    def is_connected(nodes: set) -> bool:
        start = next(iter(nodes))
        seen = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            for w in nbrs[u]:
                if w in nodes and w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == len(nodes)

    def rec(d: int, free: set, free_pop: float):
        left = k - d
        if not (left * lo <= free_pop <= left * hi):
            return
        if left == 1:
            if is_connected(free):
                for u in free:
                    assignment[u] = d
                plan = Plan(assignment, k, g.fingerprint)
                if cfg.max_cut_edges is None or cut_edges(plan, g) <= cfg.max_cut_edges:
                    out.append(plan)
                for u in free:
                    assignment[u] = -1
            return
        start = min(free)
        for S in _connected_sets(nbrs, free, start, pops, hi):
            spop = sum(pops[u] for u in S)
            if spop < lo:
                continue
            rest = free - S
            if not rest:
                continue
            for u in S:
                assignment[u] = d
            rec(d + 1, rest, free_pop - spop)
            for u in S:
                assignment[u] = -1

    rec(0, set(range(g.n)), sum(pops))
    return out


def write_plan_csv(plan: Plan, g: DualGraph, path: str | Path) -> None:
    plan.check(g)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id", "district"])
        for uid, d in zip(g.ids, plan.canonical):
            w.writerow([uid, int(d)])


def read_plan_csv(path: str | Path, g: DualGraph) -> Plan:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["unit_id", "district"]:
        raise PlanError(f"{path}: line 1: expected header 'unit_id,district'")
    assignment = np.full(g.n, -1, dtype=np.int64)
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise PlanError(f"{path}: line {lineno}: expected 2 fields")
        uid, label = row
        if uid not in g.index:
            raise PlanError(f"{path}: line {lineno}: unknown unit {uid!r}")
        try:
            assignment[g.index[uid]] = int(label)
        except ValueError:
            raise PlanError(f"{path}: line {lineno}: bad district label {label!r}") from None
    if (assignment < 0).any():
        missing = g.ids[int(np.flatnonzero(assignment < 0)[0])]
        raise PlanError(f"{path}: unit {missing!r} has no district")
    return Plan(assignment, graph_ref=g.fingerprint)
