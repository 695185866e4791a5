"""Population medoid as a constrained max-weight k-cut.

With pair weights ``s(i, j) = theta(i, j) * (1 - 2 c(i, j)) / 2`` and ``B``
the "different district" indicator, every plan satisfies

    d2(plan, c) + sum_{i != j} s(i, j) B(i, j) = sum_{i < j} theta (1 - c)^2

so maximising the cut weight (summed over ordered pairs) is the same as
minimising the squared distance to the centroid. Exact solving is by
enumeration and only feasible for tiny graphs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .centroid import (CentroidMatrix, argmin_set, exact_population_centroid,
                       plan_centroid_distance_sq)
from .districting import Plan, ValidityConfig, enumerate_valid_plans
from .graph import DualGraph, grid
from .metric import ThetaWeights, distance


class KCutError(ValueError):
    pass


@dataclass(eq=False)
class KCutInstance:
    """Symmetric cut weights ``S`` (zero diagonal) plus what is needed to enumerate plans."""

    S: np.ndarray
    k: int
    cfg: ValidityConfig
    graph: DualGraph | None = None
    centroid: CentroidMatrix | None = None
    weights: ThetaWeights | None = None

    @property
    def n(self) -> int:
        return self.S.shape[0]

    def s(self, i: int, j: int) -> float:
        if i == j:
            raise KCutError("s is defined for distinct units only")
        return float(self.S[i, j])


def build_instance(centroid: CentroidMatrix, weights: ThetaWeights, g: DualGraph, k: int,
                   cfg: ValidityConfig = ValidityConfig()) -> KCutInstance:
    if centroid.n != g.n:
        raise KCutError(f"centroid covers {centroid.n} units, graph has {g.n}")
    c = centroid.dense_values()
    S = 0.5 * weights.dense(g) * (1.0 - 2.0 * c)
    np.fill_diagonal(S, 0.0)
    S.setflags(write=False)
    return KCutInstance(S, k, cfg, g, centroid, weights)


def cut_objective(inst: KCutInstance, plan: Plan) -> float:
    """Sum of ``s(i, j)`` over ordered pairs split between districts."""
    a = plan.assignment
    if a.size != inst.n:
        raise KCutError(f"plan has {a.size} units, instance has {inst.n}")
    iu, ju = np.triu_indices(inst.n, 1)
    split = a[iu] != a[ju]
    return 2.0 * math.fsum(inst.S[iu[split], ju[split]])


def cut_constant(inst: KCutInstance) -> float:
    """``d2(plan, c) + cut_objective(plan)`` for any plan."""
    if inst.centroid is None or inst.weights is None:
        raise KCutError("instance carries no centroid")
    c = inst.centroid.dense_values()
    th = inst.weights.dense(inst.graph)
    iu, ju = np.triu_indices(inst.n, 1)
    return math.fsum(th[iu, ju] * (1.0 - c[iu, ju]) ** 2)


@dataclass
class MedoidSolution:
    plans: list[Plan]
    objective: float
    argmin_d2: list[Plan] | None = None

    @property
    def agrees(self) -> bool | None:
        if self.argmin_d2 is None:
            return None
        return set(self.plans) == set(self.argmin_d2)


def exact_population_medoid(inst: KCutInstance, plans: list[Plan] | None = None,
                            rtol: float = 1e-9) -> MedoidSolution:
    """
    All valid plans maximising the cut objective.

    When the instance keeps its centroid, the minimisers of ``d2`` to it over
    the same enumeration are returned alongside for comparison.
    """
    if plans is None:
        if inst.graph is None:
            raise KCutError("instance has no graph to enumerate plans on")
        plans = enumerate_valid_plans(inst.graph, inst.k, inst.cfg)
    if not plans:
        raise KCutError("no valid plans")
    obj = np.array([cut_objective(inst, p) for p in plans])
    best = sorted(argmin_set(-obj, rtol))
    sol = MedoidSolution([plans[t] for t in best], float(obj[best[0]]))
    if inst.centroid is not None and inst.weights is not None:
        d2 = [plan_centroid_distance_sq(p, inst.centroid, inst.weights, inst.graph) for p in plans]
        sol.argmin_d2 = [plans[t] for t in sorted(argmin_set(d2, rtol))]
    return sol


def save_instance(inst: KCutInstance, path: str | Path) -> None:
    iu, ju = np.triu_indices(inst.n, 1)
    with open(path, "w") as fh:
        fh.write(f"# {inst.n} {inst.k}\n")
        for i, j, v in zip(iu.tolist(), ju.tolist(), inst.S[iu, ju].tolist()):
            fh.write(f"{i},{j},{v!r}\n")


def load_instance(path: str | Path, g: DualGraph | None = None,
                  cfg: ValidityConfig = ValidityConfig()) -> KCutInstance:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise KCutError(f"{path}: {exc.strerror}") from None
    try:
        mark, n, k = lines[0].split()
        if mark != "#":
            raise ValueError
        n, k = int(n), int(k)
    except (ValueError, IndexError):
        raise KCutError(f"{path}: line 1: expected header '# n k'") from None
    if g is not None and g.n != n:
        raise KCutError(f"{path}: instance has {n} units, graph has {g.n}")
    S = np.zeros((n, n))
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            i, j, v = line.split(",")
            i, j, v = int(i), int(j), float(v)
        except ValueError:
            raise KCutError(f"{path}: line {lineno}: expected 'i,j,s'") from None
        if not 0 <= i < j < n:
            raise KCutError(f"{path}: line {lineno}: pair ({i}, {j}) out of range")
        S[i, j] = S[j, i] = v
    S.setflags(write=False)
    return KCutInstance(S, k, cfg, g)


# negative result ----------------------------------------------------------

# 3x3 grid, three districts of 2..4 units. Each heavy plan is at distance 10
# from the other two and 5 from the central plan.
DEMO_HEAVY = (
    ((0, 1, 1), (0, 2, 1), (2, 2, 2)),
    ((0, 1, 1), (0, 0, 1), (2, 2, 1)),
    ((0, 1, 1), (0, 0, 0), (2, 2, 2)),
)
DEMO_CENTRAL = ((0, 1, 1), (0, 0, 1), (2, 2, 2))
DEMO_CFG = ValidityConfig(pop_tolerance=0.5)


def demo_fixture():
    g = grid(3, 3)
    plans = [Plan(np.ravel(p), 3, g.fingerprint) for p in DEMO_HEAVY + (DEMO_CENTRAL,)]
    return g, plans


def default_delta(T: int) -> float:
    return min(1e-3, 1.0 - (2.0 / 3.0) ** (1.0 / T))


@dataclass
class NegativeDemoReport:
    T: int
    delta: float
    trials: int
    miss_rate: float          # draws never include the population medoid
    wrong_medoid_rate: float  # sample medoid differs from the population medoid
    expected_miss: float      # (1 - delta)^T
    f_medoid: float
    f_heavy: float
    medoid_agrees: bool       # cut maximiser == d2 minimiser on the full enumeration

    @property
    def cost_ratio(self) -> float:
        return self.f_heavy / self.f_medoid if self.f_medoid > 0 else math.inf


def _rational(delta: float) -> Fraction:
    return Fraction(delta).limit_denominator(10**12)


def negative_demo(T: int, delta: float | None = None, trials: int = 2000,
                  rng_seed: int = 0) -> NegativeDemoReport:
    """
    Three mutually distant plans share mass ``1 - delta``; a fourth plan
    between them carries ``delta`` and is the population medoid. Draw ``T``
    plans ``trials`` times and count how often the medoid is missed.
    """
    if T < 1 or trials < 1:
        raise ValueError("T and trials must be positive")
    delta = default_delta(T) if delta is None else float(delta)
    if not 0.0 <= delta < 1.0:
        raise ValueError("delta must lie in [0, 1)")
    g, plans = demo_fixture()
    weights = ThetaWeights.unweighted()
    dq = _rational(delta)
    probs = [(1 - dq) / 3] * 3 + [dq]

    D = np.array([[distance(p, q, weights, g) for q in plans] for p in plans])
    f = D @ np.array([float(p) for p in probs])

    enum = enumerate_valid_plans(g, 3, DEMO_CFG)
    dist = {p: q for p, q in zip(plans, probs)}
    cent = exact_population_centroid(g, 3, DEMO_CFG, dist, enum)
    sol = exact_population_medoid(build_instance(cent, weights, g, 3, DEMO_CFG), enum)
    if sol.plans != [plans[3]]:
        raise RuntimeError("fixture's population medoid is not the central plan")

    rng = np.random.default_rng(rng_seed)
    p = np.array([float(q) for q in probs])
    p /= p.sum()
    draws = rng.choice(4, size=(trials, T), p=p)
    counts = np.stack([(draws == t).sum(axis=1) for t in range(4)], axis=1)
    missed = counts[:, 3] == 0
    # sample medoid: sampled plan minimising the summed distance to the draws
    cost = counts @ D.T
    cost = np.where(counts > 0, cost, np.inf)
    wrong = np.array([set(np.flatnonzero(row <= row.min() * (1 + 1e-12))) != {3} for row in cost])
    return NegativeDemoReport(
        T=T, delta=delta, trials=trials,
        miss_rate=float(missed.mean()),
        wrong_medoid_rate=float(wrong.mean()),
        expected_miss=(1.0 - delta) ** T,
        f_medoid=float(f[3]),
        f_heavy=float(f[:3].min()),
        medoid_agrees=bool(sol.agrees),
    )
