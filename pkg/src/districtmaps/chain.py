"""Spanning-tree recombination chain, medoid refinement and planted outliers.

One step picks a uniformly random cut edge, merges the two districts it
joins, draws a uniform spanning tree of the merged region and re-splits it
along a tree edge leaving both halves within the population tolerance.
An optional acceptance rule compares the proposal's squared distance to a
fixed centroid with the current plan's.
"""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .centroid import CentroidMatrix, Ensemble, _DenseScorer, _label_dtype
from .districting import Plan, PlanError, ValidityConfig, cut_edges, is_valid, write_plan_csv, read_plan_csv
from .graph import DualGraph
from .metric import ThetaWeights
from .trees import balanced_split

log = logging.getLogger(__name__)

DEFAULT_BURN_IN = 2000
STALL_LIMIT = 10_000
MAX_TRIES = 20


class ChainStall(RuntimeError):
    pass


class CentroidScore(_DenseScorer):
    """
    Incremental ``d2(plan, centroid)``.

    A district's contribution is the sum of ``W`` over its internal pairs;
    a recombination step only changes two districts.
    """

    def __init__(self, centroid: CentroidMatrix, weights: ThetaWeights, g: DualGraph):
        super().__init__(centroid, weights, g)
        self.centroid = centroid
        self.weights = weights

    def within(self, idx: np.ndarray) -> float:
        return float(self.W[np.ix_(idx, idx)].sum()) / 2.0

    def parts(self, plan: Plan) -> np.ndarray:
        return np.array([self.within(idx) for idx in plan.districts])

    def total(self, parts: np.ndarray) -> float:
        return max(0.0, self.K + float(parts.sum()))


@dataclass(frozen=True)
class AcceptAny:
    def __call__(self, old: float, new: float) -> bool:
        return True


# relative margin a move must clear; re-splitting into the same plan changes
# only the summation order
IMPROVE_RTOL = 1e-12


@dataclass(frozen=True)
class CloserToCentroid:
    score: CentroidScore

    def __call__(self, old: float, new: float) -> bool:
        return new < old - IMPROVE_RTOL * abs(old)


@dataclass(frozen=True)
class FartherFromCentroid:
    score: CentroidScore

    def __call__(self, old: float, new: float) -> bool:
        return new > old + IMPROVE_RTOL * abs(old)


@dataclass
class ChainState:
    """
    Cursor of one chain.

    ``step`` counts accepted transitions, ``proposals`` counts calls to
    :func:`recom_step`; ``stalled`` counts consecutive rejections.
    """

    current: Plan
    rng: np.random.Generator
    cfg: ValidityConfig = field(default_factory=ValidityConfig)
    accept_rule: AcceptAny | CloserToCentroid | FartherFromCentroid = field(default_factory=AcceptAny)
    step: int = 0
    proposals: int = 0
    stalled: int = 0
    parts: np.ndarray | None = None

    @classmethod
    def start(cls, plan: Plan, rng_seed: int, cfg: ValidityConfig = ValidityConfig(),
              accept_rule=None) -> "ChainState":
        rule = accept_rule or AcceptAny()
        parts = rule.score.parts(plan) if hasattr(rule, "score") else None
        return cls(plan, np.random.default_rng(rng_seed), cfg, rule, parts=parts)

    @property
    def d2(self) -> float:
        if self.parts is None:
            raise AttributeError("chain has no centroid score")
        return self.accept_rule.score.total(self.parts)


def recom_step(state: ChainState, g: DualGraph, max_tries: int = MAX_TRIES):
    """
    Propose up to ``max_tries`` recombinations and take the first admissible one.

    Returns ``(new_state, accepted)``. The state's generator is advanced in
    place, so a state should not be stepped twice.
    """
    plan = state.current
    a = plan.assignment
    e = g.edge_array
    cut = np.flatnonzero(a[e[:, 0]] != a[e[:, 1]]) if len(e) else np.zeros(0, dtype=np.int64)
    proposals = state.proposals + 1
    if cut.size == 0:
        return replace(state, proposals=proposals, stalled=state.stalled + 1), False
    lo, hi = state.cfg.bounds(g, plan.k)
    rule = state.accept_rule
    scored = state.parts is not None
    for _ in range(max_tries):
        i, j = e[cut[state.rng.integers(cut.size)]]
        d1, d2 = int(a[i]), int(a[j])
        nodes = np.flatnonzero((a == d1) | (a == d2))
        _, side = balanced_split(g, nodes, (lo, hi), (lo, hi), state.rng, 1)
        if side is None:
            continue
        new = a.copy()
        new[nodes] = d2
        new[side] = d1
        proposal = Plan(new, plan.k, plan.graph_ref)
        if state.cfg.max_cut_edges is not None and cut_edges(proposal, g) > state.cfg.max_cut_edges:
            continue
        parts = None
        if scored:
            parts = state.parts.copy()
            parts[d1] = rule.score.within(np.flatnonzero(new == d1))
            parts[d2] = rule.score.within(np.flatnonzero(new == d2))
            if not rule(rule.score.total(state.parts), rule.score.total(parts)):
                continue
        return replace(state, current=proposal, step=state.step + 1, proposals=proposals,
                       stalled=0, parts=parts), True
    return replace(state, proposals=proposals, stalled=state.stalled + 1), False


@dataclass
class ChainRun:
    kept: Ensemble | None
    final: ChainState
    centroid: CentroidMatrix | None = None
    n_kept: int = 0


def run_chain(g: DualGraph, k: int, cfg: ValidityConfig, seed_plan: Plan, rng_seed: int,
              total_steps: int, burn_in: int = DEFAULT_BURN_IN, thin: int = 1,
              accumulator: CentroidMatrix | None = None, plan_dir: str | Path | None = None,
              keep: bool = True, sink: Callable[[int, Plan], None] | None = None,
              stall_limit: int = STALL_LIMIT) -> ChainRun:
    """
    Run ``total_steps`` accepted transitions from ``seed_plan``.

    States ``burn_in + 1, burn_in + 1 + thin, ...`` are kept, i.e.
    ``ceil((total_steps - burn_in) / thin)`` plans. Kept plans go to the
    accumulator, the plan directory, ``sink`` and (with ``keep``) the
    returned ensemble.
    """
    if seed_plan.k != k:
        raise PlanError(f"seed plan has {seed_plan.k} districts, expected {k}")
    if not 0 <= burn_in < total_steps:
        raise ValueError("need 0 <= burn_in < total_steps")
    if thin < 1:
        raise ValueError("thin must be positive")
    ok = is_valid(seed_plan, g, cfg)
    if not ok:
        raise PlanError(f"seed plan is invalid ({ok.rule})")
    state = ChainState.start(seed_plan, rng_seed, cfg)
    n_keep = math.ceil((total_steps - burn_in) / thin)
    kept = np.empty((n_keep if keep else 0, g.n), dtype=_label_dtype(k))
    writer = _PlanDirWriter(plan_dir, g, {
        "k": k, "pop_tolerance": cfg.pop_tolerance, "max_cut_edges": cfg.max_cut_edges,
        "rng_seed": rng_seed, "total_steps": total_steps, "burn_in": burn_in, "thin": thin,
    }) if plan_dir is not None else None
    stored = 0
    while state.step < total_steps:
        state, accepted = recom_step(state, g)
        if not accepted:
            if state.stalled >= stall_limit:
                raise ChainStall(f"{state.stalled} consecutive rejections at step {state.step}")
            continue
        if state.step > burn_in and (state.step - burn_in - 1) % thin == 0:
            plan = state.current
            if accumulator is not None:
                accumulator.add(plan)
            if keep:
                kept[stored] = plan.assignment
            if writer is not None:
                writer.write(state.step, plan)
            if sink is not None:
                sink(state.step, plan)
            stored += 1
    if writer is not None:
        writer.close(stored)
    ens = Ensemble(kept[:stored], k, seed_plan.graph_ref) if keep else None
    return ChainRun(ens, state, accumulator, stored)


def _hill_climb(start: Plan, rule, g: DualGraph, cfg: ValidityConfig, rng_seed: int,
                steps: int, stall_limit: int):
    state = ChainState.start(start, rng_seed, cfg, rule)
    trajectory = [state.d2]
    for _ in range(steps):
        state, accepted = recom_step(state, g)
        if accepted:
            trajectory.append(state.d2)
        elif state.stalled >= stall_limit:
            log.info("hill climb stalled after %d proposals", state.proposals)
            break
    return state.current, trajectory


def refine_medoid(start: Plan, centroid: CentroidMatrix, weights: ThetaWeights, g: DualGraph,
                  cfg: ValidityConfig, rng_seed: int, steps: int,
                  stall_limit: int = STALL_LIMIT) -> tuple[Plan, list[float]]:
    """
    Walk the chain from ``start`` accepting only moves closer to ``centroid``.

    Returns the final plan and the squared distance after every accepted
    move (first entry is the start). A stall ends the walk early.
    """
    rule = CloserToCentroid(CentroidScore(centroid, weights, g))
    return _hill_climb(start, rule, g, cfg, rng_seed, steps, stall_limit)


def plant_outlier(start: Plan, centroid: CentroidMatrix, weights: ThetaWeights, g: DualGraph,
                  cfg: ValidityConfig, rng_seed: int, steps: int,
                  stall_limit: int = STALL_LIMIT) -> Plan:
    """Walk away from ``centroid``: only moves that increase the squared distance."""
    rule = FartherFromCentroid(CentroidScore(centroid, weights, g))
    plan, _ = _hill_climb(start, rule, g, cfg, rng_seed, steps, stall_limit)
    return plan


# plan directories -------------------------------------------------------

_PLAN_FILE = re.compile(r"plan_(\d+)\.csv$")


class _PlanDirWriter:
    def __init__(self, path, g: DualGraph, params: dict):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.g = g
        self.params = params

    def write(self, step: int, plan: Plan):
        write_plan_csv(plan, self.g, self.path / f"plan_{step}.csv")

    def close(self, count: int):
        manifest = {"graph_hash": self.g.fingerprint, "n": self.g.n, "plans": count, **self.params}
        (self.path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def plan_files(path: str | Path) -> list[Path]:
    found = []
    for p in Path(path).iterdir():
        m = _PLAN_FILE.search(p.name)
        if m:
            found.append((int(m.group(1)), p))
    return [p for _, p in sorted(found)]


def load_plan_dir(path: str | Path, g: DualGraph) -> Ensemble:
    files = plan_files(path)
    if not files:
        raise PlanError(f"{path}: no plan_<step>.csv files")
    plans = [read_plan_csv(f, g) for f in files]
    return Ensemble.from_plans(plans)


def write_plan_dir(plans: Iterable[Plan], g: DualGraph, path: str | Path, params: dict | None = None):
    writer = _PlanDirWriter(path, g, params or {})
    count = 0
    for step, plan in enumerate(plans, start=1):
        writer.write(step, plan)
        count += 1
    writer.close(count)
