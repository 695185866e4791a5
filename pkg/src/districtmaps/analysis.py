"""Ensemble analytics: distance histograms, percentiles, medoid costs, seats."""
from __future__ import annotations

import csv
import math
from bisect import bisect_left
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .centroid import CentroidMatrix, distances_to_centroid, plan_centroid_distance_sq
from .districting import Plan
from .graph import DualGraph
from .metric import ThetaWeights, distance, distance_fast

DEFAULT_BINS = 100


class AnalysisError(ValueError):
    pass


def _dist(weights: ThetaWeights):
    return distance_fast if weights.factorizable else distance


@dataclass(frozen=True)
class DistanceHistogram:
    """Sorted squared distances of an ensemble to one centroid."""

    values: np.ndarray
    theta: str = ""
    centroid: str = ""

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=np.float64))
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def T(self) -> int:
        return int(self.values.size)

    def binned(self, bins: int = DEFAULT_BINS):
        """``(counts, edges)`` over equal-width bins; only for rendering."""
        if self.T == 0:
            raise AnalysisError("empty histogram")
        return np.histogram(self.values, bins=bins)

    def save(self, path: str | Path) -> None:
        lines = [f"# theta={self.theta} centroid={self.centroid} T={self.T}"]
        lines.extend(repr(float(x)) for x in self.values)
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "DistanceHistogram":
        path = Path(path)
        try:
            text = path.read_text().splitlines()
        except OSError as exc:
            raise AnalysisError(f"{path}: {exc.strerror}") from None
        if not text or not text[0].startswith("# "):
            raise AnalysisError(f"{path}:1: missing '# theta=... centroid=... T=...' header")
        meta = dict(part.split("=", 1) for part in text[0][2:].split() if "=" in part)
        if not {"theta", "centroid", "T"} <= meta.keys():
            raise AnalysisError(f"{path}:1: malformed header")
        values = []
        for lineno, line in enumerate(text[1:], start=2):
            if not line.strip():
                continue
            try:
                values.append(float(line))
            except ValueError:
                raise AnalysisError(f"{path}:{lineno}: not a number: {line!r}") from None
        if str(len(values)) != meta["T"]:
            raise AnalysisError(f"{path}: header says T={meta['T']} but {len(values)} values follow")
        return cls(np.array(values), meta["theta"], meta["centroid"])


def histogram(plans, acc: CentroidMatrix, weights: ThetaWeights, g: DualGraph,
              centroid_name: str = "", threads: int = 1) -> DistanceHistogram:
    d2 = distances_to_centroid(plans, acc, weights, g, threads=threads)
    return DistanceHistogram(d2, weights.label, centroid_name)


def percentile_of(h: DistanceHistogram, probe_d2: float, rtol: float = 1e-12) -> float:
    """
    Share of ensemble values strictly below ``probe_d2``, in percent.

    Values within ``rtol`` of the probe count as equal, so the same plan
    scored by two summation orders is not ranked above itself.
    """
    if h.T == 0:
        raise AnalysisError("empty histogram")
    below = bisect_left(h.values, probe_d2 - rtol * abs(probe_d2))
    return 100.0 * below / h.T


def medoid_cost(probe: Plan, dist: Mapping[Plan, float] | Sequence[tuple[Plan, float]],
                weights: ThetaWeights, g: DualGraph) -> float:
    """Expected distance from ``probe`` to a plan drawn from ``dist``."""
    items = list(dist.items()) if isinstance(dist, Mapping) else list(dist)
    mass = math.fsum(p for _, p in items)
    if abs(mass - 1.0) > 1e-12:
        raise AnalysisError(f"probabilities sum to {mass!r}, not 1")
    pick = _dist(weights)
    return math.fsum(p * pick(probe, plan, weights, g) for plan, p in items if p)


def committee_cost(candidate: Plan, candidates: Sequence[Plan], votes, weights: ThetaWeights,
                   g: DualGraph) -> float:
    pick = _dist(weights)
    return math.fsum(v * pick(candidate, other, weights, g) for other, v in zip(candidates, votes) if v)


def committee_medoid(candidates: Sequence[Plan], votes, weights: ThetaWeights,
                     g: DualGraph) -> Plan:
    """
    Candidate minimising the vote-weighted sum of distances to all candidates.

    Votes are normalised to a distribution first, so scaling them leaves the
    winner unchanged. Ties go to the earliest candidate.
    """
    votes = np.asarray(votes, dtype=np.float64)
    if len(candidates) == 0 or votes.shape != (len(candidates),):
        raise AnalysisError("need one vote count per candidate")
    if (votes < 0).any():
        raise AnalysisError("votes must be nonnegative")
    total = votes.sum()
    if total <= 0:
        raise AnalysisError("all candidates received zero votes")
    share = votes / total
    costs = [committee_cost(c, candidates, share, weights, g) for c in candidates]
    return candidates[int(np.argmin(costs))]


def relative_error(m1: Plan, m2: Plan, centroid: CentroidMatrix, weights: ThetaWeights,
                   g: DualGraph) -> float:
    """``|d1 - d2| / min(d1, d2)`` of the two plans' squared centroid distances.

    Returns ``inf`` when exactly one distance is zero and 0 when both are.
    """
    d1 = plan_centroid_distance_sq(m1, centroid, weights, g)
    d2 = plan_centroid_distance_sq(m2, centroid, weights, g)
    return relative_error_values(d1, d2)


def relative_error_values(d1: float, d2: float) -> float:
    if d1 == d2:
        return 0.0
    low = min(d1, d2)
    if low <= 0:
        return math.inf
    return abs(d1 - d2) / low


# elections --------------------------------------------------------------

@dataclass(frozen=True)
class VoteTable:
    votes_a: np.ndarray
    votes_b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.votes_a, dtype=np.float64)
        b = np.asarray(self.votes_b, dtype=np.float64)
        if a.shape != b.shape or a.ndim != 1:
            raise AnalysisError("vote columns must be equal-length vectors")
        if (a < 0).any() or (b < 0).any() or not np.isfinite(a).all() or not np.isfinite(b).all():
            raise AnalysisError("votes must be finite and nonnegative")
        if (a + b).sum() <= 0:
            raise AnalysisError("vote table has no votes")
        object.__setattr__(self, "votes_a", a)
        object.__setattr__(self, "votes_b", b)

    @property
    def n(self) -> int:
        return self.votes_a.size

    def save(self, g: DualGraph, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["unit_id", "votes_a", "votes_b"])
            for uid, a, b in zip(g.ids, self.votes_a, self.votes_b):
                w.writerow([uid, repr(float(a)), repr(float(b))])

    @classmethod
    def load(cls, g: DualGraph, path: str | Path) -> "VoteTable":
        path = Path(path)
        a = np.full(g.n, np.nan)
        b = np.full(g.n, np.nan)
        try:
            fh = open(path, newline="")
        except OSError as exc:
            raise AnalysisError(f"{path}: {exc.strerror}") from None
        with fh:
            rows = csv.reader(fh)
            header = next(rows, None)
            if header != ["unit_id", "votes_a", "votes_b"]:
                raise AnalysisError(f"{path}:1: expected header unit_id,votes_a,votes_b")
            for lineno, row in enumerate(rows, start=2):
                if not row:
                    continue
                if len(row) != 3:
                    raise AnalysisError(f"{path}:{lineno}: expected 3 fields")
                if row[0] not in g.index:
                    raise AnalysisError(f"{path}:{lineno}: unknown unit {row[0]!r}")
                i = g.index[row[0]]
                try:
                    a[i], b[i] = float(row[1]), float(row[2])
                except ValueError:
                    raise AnalysisError(f"{path}:{lineno}: bad vote count") from None
        missing = np.flatnonzero(np.isnan(a))
        if missing.size:
            raise AnalysisError(f"{path}: no votes for unit {g.ids[missing[0]]!r}")
        return cls(a, b)


@dataclass(frozen=True)
class SeatResult:
    seats_a: int
    seats_b: int
    shares: np.ndarray  # party A share per district (nan for an empty district)
    ties: tuple[int, ...]


def seats(plan: Plan, votes: VoteTable) -> SeatResult:
    """Districts won by strict plurality; exact ties count for neither party."""
    if plan.assignment.size != votes.n:
        raise AnalysisError(f"plan has {plan.assignment.size} units, votes cover {votes.n}")
    a = np.bincount(plan.assignment, weights=votes.votes_a, minlength=plan.k)
    b = np.bincount(plan.assignment, weights=votes.votes_b, minlength=plan.k)
    tot = a + b
    with np.errstate(invalid="ignore", divide="ignore"):
        shares = np.where(tot > 0, a / tot, np.nan)
    ties = tuple(int(d) for d in np.flatnonzero(a == b))
    return SeatResult(int((a > b).sum()), int((b > a).sum()), shares, ties)


def seats_histogram(ensemble, votes: VoteTable) -> np.ndarray:
    """``counts[s]`` = number of plans in which party A wins ``s`` seats."""
    plans = list(ensemble)
    if not plans:
        raise AnalysisError("empty ensemble")
    k = max(p.k for p in plans)
    counts = np.zeros(k + 1, dtype=np.int64)
    for p in plans:
        counts[seats(p, votes).seats_a] += 1
    return counts
