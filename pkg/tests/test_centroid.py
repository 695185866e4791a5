import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from districtmaps.centroid import (CentroidError, CentroidMatrix, Ensemble, accumulate,
                                   avg_ensemble_distance, centroid_of, decomposition_check,
                                   distances_to_centroid, exact_population_centroid, load_centroid,
                                   mean_spread, mean_spread_pass, merge, pairwise_medoid_set,
                                   plan_centroid_distance_sq, required_samples, required_samples_dsq,
                                   sample_medoid, sample_medoid_set, save_centroid)
from districtmaps.districting import Plan, ValidityConfig, canonical_labels, enumerate_valid_plans
from districtmaps.graph import grid, path_graph
from districtmaps.metric import ThetaWeights, distance

from conftest import oracle_centroid, oracle_distance, oracle_distance_sq_to_matrix, random_plans, theta_fn

UNW = ThetaWeights.unweighted()
POP = ThetaWeights.population()


def test_single_plan_is_its_comembership():
    p = Plan([0, 0, 1, 2, 1])
    c = centroid_of([p]).dense_values()
    assert (c == p.comembership()).all()


def test_three_path_two_plans(path3_plans):
    c = centroid_of(path3_plans)
    assert c.value(0, 1) == 0.5 and c.value(1, 2) == 0.5 and c.value(0, 2) == 0
    assert c.T == 2
    assert c.pairs()[0].tolist() == [0, 1]


def test_centroid_frequency_oracle():
    rng = np.random.default_rng(1)
    assignments = [canonical_labels(rng.integers(0, 3, 7)) for _ in range(2000)]
    assignments = [a for a in assignments if a.max() == 2]
    c = centroid_of([Plan(a) for a in assignments]).dense_values()
    want = oracle_centroid([a.tolist() for a in assignments])
    assert np.array_equal(c, np.array(want))


def test_merge_identity_and_commutativity(grid4_plans):
    rng = np.random.default_rng(2)
    a = centroid_of(random_plans(grid4_plans, 40, rng))
    b = centroid_of(random_plans(grid4_plans, 70, rng))
    empty = CentroidMatrix(16)
    assert merge(a, empty) == a
    assert merge(a, b) == merge(b, a)


def test_sharded_merge_equals_single_stream(grid4_plans):
    rng = np.random.default_rng(3)
    plans = random_plans(grid4_plans, 1000, rng)
    whole = CentroidMatrix(16)
    for p in plans:
        accumulate(whole, p)
    shards = [centroid_of(plans[s::4]) for s in range(4)]
    merged = shards[0]
    for s in shards[1:]:
        merged = merge(merged, s)
    assert merged == whole
    assert merged.T == 1000
    assert np.array_equal(merged.dense_counts(), whole.dense_counts())


def test_add_many_matches_add(grid4_plans):
    rng = np.random.default_rng(4)
    plans = random_plans(grid4_plans, 300, rng)
    one = CentroidMatrix(16)
    for p in plans:
        one.add(p)
    assert CentroidMatrix(16).add_many(Ensemble.from_plans(plans)) == one


def test_sparse_and_dense_storage_agree():
    rng = np.random.default_rng(6)
    plans = [Plan(canonical_labels(rng.integers(0, 12, 60))) for _ in range(30)]
    plans = [p for p in plans if p.k == 12]
    sparse = CentroidMatrix(60, dense_fraction=1.1)
    dense = CentroidMatrix(60, dense_fraction=0.0)
    for p in plans:
        sparse.add(p)
        dense.add(p)
    assert not sparse.is_dense and dense.is_dense
    assert sparse == dense
    g = grid(6, 10, rng.uniform(1, 4, 60))
    probe = plans[0]
    for w in (UNW, POP, ThetaWeights.path_decay(0.5)):
        assert plan_centroid_distance_sq(probe, sparse, w, g) == pytest.approx(
            plan_centroid_distance_sq(probe, dense, w, g), rel=1e-12)


def test_merge_rejects_size_mismatch():
    with pytest.raises(CentroidError):
        merge(CentroidMatrix(3), CentroidMatrix(4))


def test_exact_centroid_three_path(path3, path3_plans):
    c = exact_population_centroid(path3, 2, ValidityConfig(1.0), [Fraction(1, 2)] * 2)
    assert c.value(0, 1) == 0.5 and c.value(0, 2) == 0


def test_exact_centroid_point_mass(grid4):
    plans = enumerate_valid_plans(grid4, 2, ValidityConfig(0.0))
    dist = [0] * len(plans)
    dist[5] = 1
    c = exact_population_centroid(grid4, 2, ValidityConfig(0.0), dist)
    assert np.array_equal(c.dense_values(), plans[5].comembership().astype(float))


def test_exact_centroid_square():
    g = grid(2, 2)
    c = exact_population_centroid(g, 2, ValidityConfig(0.0), [0.5, 0.5]).dense_values()
    for i, j in g.edges:
        assert c[i, j] == 0.5
    assert c[0, 3] == 0 and c[1, 2] == 0


def test_exact_centroid_rejects_bad_mass(path3):
    with pytest.raises(CentroidError):
        exact_population_centroid(path3, 2, ValidityConfig(1.0), [0.5, 0.4])


def test_medoid_single_plan():
    p = Plan([0, 1, 1])
    m = sample_medoid([p], centroid_of([p]), UNW, path_graph([1, 1, 1]))
    assert m.plan == p and m.d2 == 0


def test_medoid_three_path_tie(path3, path3_plans):
    m = sample_medoid(path3_plans, centroid_of(path3_plans), UNW, path3)
    assert m.index == 0
    assert m.d2 == pytest.approx(0.5)
    assert sample_medoid_set(path3_plans, centroid_of(path3_plans), UNW, path3) == {0, 1}


@pytest.mark.parametrize("w", [UNW, POP], ids=["unweighted", "pop"])
def test_medoid_matches_pairwise_oracle(w):
    g = grid(4, 4, np.arange(1, 17))
    plans = enumerate_valid_plans(g, 2, ValidityConfig(0.3))
    rng = np.random.default_rng(8)
    sample = random_plans(plans, 200, rng)
    acc = centroid_of(sample)
    th = theta_fn(w.kind, g)
    # independent: summed oracle distances
    lists = [p.assignment.tolist() for p in sample]
    uniq = {tuple(x) for x in lists}
    dcache = {(a, b): oracle_distance(list(a), list(b), th) for a in uniq for b in uniq}
    sums = [math.fsum(dcache[(tuple(x), tuple(y))] for y in lists) for x in lists]
    best = min(sums)
    want = {t for t, s in enumerate(sums) if s <= best * (1 + 1e-9)}
    assert sample_medoid_set(sample, acc, w, g) == want
    assert pairwise_medoid_set(sample, w, g) == want


def test_decomposition_three_path(path3, path3_plans):
    r = decomposition_check(path3_plans, centroid_of(path3_plans), path3_plans[0], UNW, path3)
    assert r.lhs == pytest.approx(2.0) and r.rhs == pytest.approx(2.0)


def test_decomposition_copies_of_one_plan():
    g = grid(3, 3)
    p = Plan([0, 0, 1, 0, 0, 1, 2, 2, 1])
    ens = [p] * 7
    r = decomposition_check(ens, centroid_of(ens), p, POP, g)
    assert r.lhs == 0 and r.rhs == pytest.approx(0, abs=1e-12)


@st.composite
def ensembles(draw):
    n = draw(st.integers(3, 25))
    k = draw(st.integers(2, min(5, n)))
    T = draw(st.integers(1, 60))
    seed = draw(st.integers(0, 2**32 - 1))
    return n, k, T, seed


@settings(max_examples=40, deadline=None)
@given(ensembles())
def test_decomposition_and_spread_properties(args):
    n, k, T, seed = args
    rng = np.random.default_rng(seed)
    g = path_graph(rng.uniform(1, 20, n))
    plans = [Plan(canonical_labels(np.r_[np.arange(k), rng.integers(0, k, n - k)])) for _ in range(T)]
    probe = Plan(canonical_labels(np.r_[np.arange(k), rng.integers(0, k, n - k)]))
    acc = centroid_of(plans)
    for w in (UNW, POP, ThetaWeights.path_decay(0.3)):
        r = decomposition_check(plans, acc, probe, w, g)
        assert r.residual <= 1e-9
        spread = mean_spread(acc, w, g)
        assert spread == pytest.approx(mean_spread_pass(plans, acc, w, g), rel=1e-9, abs=1e-9)
        direct = math.fsum(distance(probe, p, w, g) for p in plans) / T
        assert avg_ensemble_distance(probe, acc, spread, w, g) == pytest.approx(direct, rel=1e-9, abs=1e-9)


def test_avg_distance_examples(path3, path3_plans):
    acc = centroid_of(path3_plans)
    spread = mean_spread(acc, UNW, path3)
    assert spread == pytest.approx(0.5)
    assert avg_ensemble_distance(path3_plans[0], acc, spread, UNW, path3) == pytest.approx(1.0)
    one = centroid_of(path3_plans[:1])
    assert avg_ensemble_distance(path3_plans[1], one, mean_spread(one, UNW, path3), UNW, path3) == \
        distance(path3_plans[1], path3_plans[0], UNW, path3)


def test_batched_distances_match_oracle(grid4_plans):
    rng = np.random.default_rng(9)
    g = grid(4, 4, rng.uniform(1, 9, 16))
    sample = random_plans(grid4_plans, 500, rng)
    acc = centroid_of(sample)
    cm = acc.dense_values().tolist()
    for w in (UNW, POP):
        got = distances_to_centroid(sample, acc, w, g)
        th = theta_fn(w.kind, g)
        for t in range(0, 500, 37):
            want = oracle_distance_sq_to_matrix(sample[t].assignment.tolist(), cm, th)
            assert got[t] == pytest.approx(want, rel=1e-12)
        assert np.allclose(got, distances_to_centroid(sample, acc, w, g, threads=3), rtol=1e-13)


def test_required_samples_examples():
    assert required_samples(0.1, 0.05, 100) == 761
    assert required_samples(1e6, 0.5, 2) == 1
    assert required_samples_dsq(1.0, 0.5, 10, 1.0) == 300


@pytest.mark.parametrize("args", [(0, 0.1, 5), (0.1, 0, 5), (0.1, 1, 5), (0.1, 0.1, 1)])
def test_required_samples_rejects(args):
    with pytest.raises(ValueError):
        required_samples(*args)


def test_centroid_file_round_trip(tmp_path, grid4_plans):
    acc = centroid_of(grid4_plans[:50])
    p = tmp_path / "c.csv"
    save_centroid(acc, p)
    text = p.read_text().splitlines()
    assert text[0] == "# n=16 T=50"
    assert load_centroid(p) == acc


@pytest.mark.parametrize("body,line", [
    ("n=3 T=2\n0,1,1\n", "line 1"),
    ("# n=3 T=2\n0,1\n", "line 2"),
    ("# n=3 T=2\n0,1,1\n1,0,1\n", "line 3"),
    ("# n=3 T=2\n0,1,3\n", "line 2"),
    ("# n=3 T=2\n0,2,1\n0,1,1\n", "line 3"),
])
def test_centroid_file_errors(tmp_path, body, line):
    p = tmp_path / "c.csv"
    p.write_text(body)
    with pytest.raises(CentroidError, match=f"c.csv.*{line}"):
        load_centroid(p)
