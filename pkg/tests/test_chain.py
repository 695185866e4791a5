import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from districtmaps import chain
from districtmaps.centroid import CentroidMatrix, centroid_of, plan_centroid_distance_sq, sample_medoid
from districtmaps.chain import (ChainStall, ChainState, load_plan_dir, plant_outlier, recom_step,
                                refine_medoid, run_chain, write_plan_dir)
from districtmaps.districting import Plan, PlanError, SeedPlanError, ValidityConfig, cut_edges, is_valid, seed_plan
from districtmaps.graph import grid
from districtmaps.metric import ThetaWeights

UNW = ThetaWeights.unweighted()


@pytest.fixture(scope="module")
def g10():
    return grid(10, 10)


def test_step_deterministic(g10):
    cfg = ValidityConfig(0.05)
    start = seed_plan(g10, 4, cfg, 1)
    a, _ = recom_step(ChainState.start(start, 99, cfg), g10)
    b, _ = recom_step(ChainState.start(start, 99, cfg), g10)
    assert a.current == b.current and a.step == b.step


def test_step_rejects_single_district(g10):
    start = Plan(np.zeros(100, dtype=int))
    state, accepted = recom_step(ChainState.start(start, 0, ValidityConfig()), g10)
    assert not accepted
    assert state.current is start and state.step == 0


def test_validity_over_long_run(g10):
    cfg = ValidityConfig(0.05)
    bad = []
    seen = set()

    def check(step, plan):
        if not is_valid(plan, g10, cfg):
            bad.append(step)
        seen.add(plan)

    run_chain(g10, 4, cfg, seed_plan(g10, 4, cfg, 5), 5, 50_000, burn_in=0, keep=False, sink=check)
    assert bad == []
    assert len(seen) > 1000  # the chain actually moves


@settings(max_examples=20, deadline=None)
@given(rows=st.integers(4, 9), cols=st.integers(4, 9), k=st.integers(2, 6),
       eps=st.sampled_from([0.01, 0.05, 0.1]), seed=st.integers(0, 10_000))
def test_validity_fuzz(rows, cols, k, eps, seed):
    g = grid(rows, cols)
    cfg = ValidityConfig(eps)
    try:
        start = seed_plan(g, k, cfg, seed, max_attempts=30)
    except SeedPlanError:
        return  # infeasible tolerance for this grid
    try:
        res = run_chain(g, k, cfg, start, seed, 150, burn_in=0, stall_limit=300)
    except ChainStall:
        return
    for p in res.kept:
        assert is_valid(p, g, cfg)


def test_counts_kept_plans(g10):
    cfg = ValidityConfig(0.1)
    start = seed_plan(g10, 2, cfg, 0)
    assert run_chain(g10, 2, cfg, start, 0, 2001, burn_in=2000).n_kept == 1
    for total, burn, thin in [(120, 20, 1), (120, 20, 3), (121, 20, 7), (50, 0, 50)]:
        res = run_chain(g10, 2, cfg, start, 1, total, burn_in=burn, thin=thin)
        assert res.n_kept == len(res.kept) == math.ceil((total - burn) / thin)
        assert res.final.step == total


def test_run_chain_argument_checks(g10):
    cfg = ValidityConfig(0.1)
    start = seed_plan(g10, 2, cfg, 0)
    with pytest.raises(ValueError):
        run_chain(g10, 2, cfg, start, 0, 100, burn_in=100)
    with pytest.raises(PlanError):
        run_chain(g10, 3, cfg, start, 0, 100, burn_in=0)
    with pytest.raises(PlanError, match="invalid"):
        run_chain(g10, 2, ValidityConfig(0.0), Plan([0] * 49 + [1] * 51), 0, 10, burn_in=0)


def test_stall_raised(g10, monkeypatch):
    monkeypatch.setattr(chain, "balanced_split", lambda *a, **kw: (1, None))
    cfg = ValidityConfig(0.1)
    with pytest.raises(ChainStall):
        run_chain(g10, 2, cfg, seed_plan(g10, 2, cfg, 0), 0, 10, burn_in=0, stall_limit=25)


def test_ensembles_bit_identical(g10):
    cfg = ValidityConfig(0.05)
    start = seed_plan(g10, 4, cfg, 2)
    a = run_chain(g10, 4, cfg, start, 17, 800, burn_in=100)
    b = run_chain(g10, 4, cfg, start, 17, 800, burn_in=100)
    c = run_chain(g10, 4, cfg, start, 18, 800, burn_in=100)
    assert np.array_equal(a.kept.assignments, b.kept.assignments)
    assert not np.array_equal(a.kept.assignments, c.kept.assignments)


def test_accumulator_receives_kept_plans(g10):
    cfg = ValidityConfig(0.05)
    acc = CentroidMatrix(100)
    res = run_chain(g10, 4, cfg, seed_plan(g10, 4, cfg, 2), 3, 600, burn_in=100, thin=2, accumulator=acc)
    assert acc == centroid_of(list(res.kept))


def test_cut_cap_respected(g10):
    cfg = ValidityConfig(0.1, max_cut_edges=30)
    start = seed_plan(g10, 2, ValidityConfig(0.1), 0)
    while cut_edges(start, g10) > 30:
        start = seed_plan(g10, 2, ValidityConfig(0.1), int(cut_edges(start, g10)))
    res = run_chain(g10, 2, cfg, start, 4, 300, burn_in=0)
    assert max(cut_edges(p, g10) for p in res.kept) <= 30


@pytest.fixture(scope="module")
def small_ensemble(g10):
    cfg = ValidityConfig(0.05)
    acc = CentroidMatrix(100)
    res = run_chain(g10, 4, cfg, seed_plan(g10, 4, cfg, 7), 7, 3000, burn_in=500, accumulator=acc)
    return cfg, acc, res.kept


def test_refine_decreases(g10, small_ensemble):
    cfg, acc, ens = small_ensemble
    start = ens[len(ens) // 2]
    plan, traj = refine_medoid(start, acc, UNW, g10, cfg, rng_seed=1, steps=400)
    assert traj[0] == pytest.approx(plan_centroid_distance_sq(start, acc, UNW, g10), rel=1e-12)
    assert all(b < a for a, b in zip(traj, traj[1:]))
    assert traj[-1] == pytest.approx(plan_centroid_distance_sq(plan, acc, UNW, g10), rel=1e-9)
    assert traj[-1] < traj[0]
    assert is_valid(plan, g10, cfg)


def test_refine_at_global_minimum_stays():
    g = grid(2, 2)
    p = Plan([0, 0, 1, 1])
    plan, traj = refine_medoid(p, centroid_of([p]), UNW, g, ValidityConfig(0.0), 0, 50, stall_limit=20)
    assert plan == p and len(traj) == 1


def test_outlier_increases(g10, small_ensemble):
    cfg, acc, ens = small_ensemble
    start = ens[0]
    out = plant_outlier(start, acc, UNW, g10, cfg, 2, 300)
    assert plan_centroid_distance_sq(out, acc, UNW, g10) > plan_centroid_distance_sq(start, acc, UNW, g10)
    assert is_valid(out, g10, cfg)
    assert plant_outlier(start, acc, UNW, g10, cfg, 2, 0) is start


def test_plan_directory_round_trip(tmp_path, g10):
    cfg = ValidityConfig(0.05)
    start = seed_plan(g10, 3, cfg, 1)
    res = run_chain(g10, 3, cfg, start, 8, 60, burn_in=10, thin=5, plan_dir=tmp_path / "ens")
    files = sorted(p.name for p in (tmp_path / "ens").glob("plan_*.csv"))
    assert len(files) == 10
    manifest = json.loads((tmp_path / "ens" / "manifest.json").read_text())
    assert manifest["graph_hash"] == g10.fingerprint
    assert manifest["rng_seed"] == 8 and manifest["thin"] == 5 and manifest["plans"] == 10
    back = load_plan_dir(tmp_path / "ens", g10)
    assert [p for p in back] == [p for p in res.kept]

    write_plan_dir(list(res.kept)[:3], g10, tmp_path / "copy")
    assert list(load_plan_dir(tmp_path / "copy", g10)) == list(res.kept)[:3]


@pytest.mark.slow
def test_refine_beats_sample_medoid(g10):
    # five districts on a 10x10 grid; with four the quadrant plan is usually already the sample medoid
    cfg = ValidityConfig(0.05)
    acc = CentroidMatrix(100)
    res = run_chain(g10, 5, cfg, seed_plan(g10, 5, cfg, 1), 1, 202_000, burn_in=2000, accumulator=acc)
    m = sample_medoid(res.kept, acc, UNW, g10)
    wins = 0
    for s in range(10):
        _, traj = refine_medoid(m.plan, acc, UNW, g10, cfg, s, 3000, stall_limit=2000)
        wins += traj[-1] < m.d2
    assert wins >= 9
