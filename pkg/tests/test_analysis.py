import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from districtmaps.analysis import (AnalysisError, DistanceHistogram, VoteTable, committee_cost,
                                   committee_medoid, histogram, medoid_cost, percentile_of,
                                   relative_error, relative_error_values, seats, seats_histogram)
from districtmaps.centroid import avg_ensemble_distance, centroid_of, mean_spread, plan_centroid_distance_sq
from districtmaps.districting import Plan, ValidityConfig, enumerate_valid_plans
from districtmaps.graph import grid, path_graph
from districtmaps.metric import ThetaWeights, distance

from conftest import oracle_distance, random_plans, theta_fn

UNW = ThetaWeights.unweighted()
POP = ThetaWeights.population()


def test_percentile_above_all():
    assert percentile_of(DistanceHistogram(np.arange(1, 101)), 1000) == 100.0


def test_percentile_at_minimum_is_zero():
    assert percentile_of(DistanceHistogram([5.0, 3.0, 9.0]), 3.0) == 0.0


def test_percentile_between_values():
    assert percentile_of(DistanceHistogram([1, 2, 3, 4]), 3.5) == 75.0


def test_percentile_empty():
    with pytest.raises(AnalysisError):
        percentile_of(DistanceHistogram([]), 1.0)


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=50), st.floats(0, 1e6), st.floats(0, 1e6))
def test_percentile_monotone(values, x, y):
    h = DistanceHistogram(values)
    lo, hi = sorted((x, y))
    assert percentile_of(h, lo) <= percentile_of(h, hi)
    want = 100 * sum(1 for v in values if v < lo * (1 - 1e-12)) / len(values)
    assert percentile_of(h, lo) == pytest.approx(want)


def test_histogram_sorted_and_binned():
    h = DistanceHistogram([3.0, 1.0, 2.0, 2.5])
    assert h.values.tolist() == [1.0, 2.0, 2.5, 3.0]
    counts, edges = h.binned(bins=3)
    assert counts.sum() == h.T == 4
    assert len(edges) == 4


def test_histogram_file_round_trip(tmp_path):
    h = DistanceHistogram([0.1 + 0.2, 1 / 3, 2e-17], theta="pop", centroid="c.csv")
    p = tmp_path / "h.csv"
    h.save(p)
    assert p.read_text().splitlines()[0] == "# theta=pop centroid=c.csv T=3"
    back = DistanceHistogram.load(p)
    assert np.array_equal(back.values, h.values)
    assert back.theta == "pop" and back.centroid == "c.csv"


@pytest.mark.parametrize("body,msg", [
    ("0.5\n", "h.csv:1"),
    ("# theta=pop T=1\n0.5\n", "malformed"),
    ("# theta=pop centroid=c T=1\nabc\n", "h.csv:2"),
    ("# theta=pop centroid=c T=2\n0.5\n", "T=2"),
])
def test_histogram_file_errors(tmp_path, body, msg):
    p = tmp_path / "h.csv"
    p.write_text(body)
    with pytest.raises(AnalysisError, match=msg):
        DistanceHistogram.load(p)


def test_medoid_cost_point_mass(path3, path3_plans):
    assert medoid_cost(path3_plans[0], [(path3_plans[0], 1.0)], UNW, path3) == 0


def test_medoid_cost_three_path(path3, path3_plans):
    dist = {p: 0.5 for p in path3_plans}
    costs = [medoid_cost(p, dist, UNW, path3) for p in path3_plans]
    assert costs == [1.0, 1.0]


def test_medoid_cost_rejects_bad_mass(path3, path3_plans):
    with pytest.raises(AnalysisError):
        medoid_cost(path3_plans[0], [(path3_plans[0], 0.9)], UNW, path3)


def test_committee_single_candidate(path3, path3_plans):
    assert committee_medoid(path3_plans[:1], [3], UNW, path3) == path3_plans[0]


def test_committee_vote_scaling():
    g = grid(3, 3)
    plans = enumerate_valid_plans(g, 3, ValidityConfig(0.34))[:12]
    rng = np.random.default_rng(0)
    votes = rng.integers(0, 20, len(plans))
    a = committee_medoid(plans, votes, UNW, g)
    assert committee_medoid(plans, votes * 10, UNW, g) == a


def test_committee_four_path_brute_force():
    g = path_graph([1, 1, 1, 1])
    plans = [Plan([0, 0, 1, 1]), Plan([0, 1, 1, 1]), Plan([0, 0, 0, 1])]
    votes = [2, 1, 1]
    th = theta_fn("unweighted", g)
    sums = [math.fsum(v * oracle_distance(c.assignment.tolist(), m.assignment.tolist(), th)
                      for m, v in zip(plans, votes)) for c in plans]
    assert committee_medoid(plans, votes, UNW, g) == plans[int(np.argmin(sums))]
    # d(A,B)=3, d(A,C)=3, d(B,C)=4
    assert sums == [6.0, 10.0, 10.0]


def test_committee_minimises_weighted_cost():
    g = grid(3, 3, np.arange(1, 10))
    plans = enumerate_valid_plans(g, 3, ValidityConfig(0.5))[:15]
    votes = np.random.default_rng(2).integers(0, 9, len(plans))
    best = committee_medoid(plans, votes, POP, g)
    share = votes / votes.sum()
    floor = committee_cost(best, plans, share, POP, g)
    assert all(floor <= committee_cost(c, plans, share, POP, g) + 1e-9 for c in plans)


def test_committee_ties_go_first():
    g = path_graph([1, 1, 1])
    plans = [Plan([0, 1, 1]), Plan([0, 0, 1])]
    assert committee_medoid(plans, [1, 1], UNW, g) is plans[0]


def test_committee_zero_votes(path3, path3_plans):
    with pytest.raises(AnalysisError):
        committee_medoid(path3_plans, [0, 0], UNW, path3)


def test_relative_error_values():
    assert relative_error_values(2.0, 2.1) == pytest.approx(0.05)
    assert relative_error_values(2.1, 2.0) == relative_error_values(2.0, 2.1)
    assert relative_error_values(0.0, 1.0) == math.inf
    assert relative_error_values(0.0, 0.0) == 0.0


def test_relative_error_plans(grid4_plans, grid4):
    rng = np.random.default_rng(3)
    sample = random_plans(grid4_plans, 100, rng)
    acc = centroid_of(sample)
    a, b = sample[0], sample[1]
    assert relative_error(a, a, acc, UNW, grid4) == 0
    assert relative_error(a, b, acc, UNW, grid4) == relative_error(b, a, acc, UNW, grid4)
    d1 = plan_centroid_distance_sq(a, acc, UNW, grid4)
    d2 = plan_centroid_distance_sq(b, acc, UNW, grid4)
    assert relative_error(a, b, acc, UNW, grid4) == pytest.approx(abs(d1 - d2) / min(d1, d2))


def test_percentile_rank_by_average_distance(grid4_plans, grid4):
    rng = np.random.default_rng(4)
    sample = random_plans(grid4_plans, 300, rng)
    acc = centroid_of(sample)
    for w in (UNW, POP):
        spread = mean_spread(acc, w, grid4)
        for probe in sample[:20]:
            avg = math.fsum(distance(probe, p, w, grid4) for p in sample) / len(sample)
            assert avg_ensemble_distance(probe, acc, spread, w, grid4) - spread == pytest.approx(
                plan_centroid_distance_sq(probe, acc, w, grid4), rel=1e-9)
            assert avg - spread == pytest.approx(plan_centroid_distance_sq(probe, acc, w, grid4), rel=1e-9)


def test_histogram_from_ensemble(grid4_plans, grid4):
    sample = random_plans(grid4_plans, 50, np.random.default_rng(5))
    acc = centroid_of(sample)
    h = histogram(sample, acc, UNW, grid4, "c.csv")
    want = sorted(plan_centroid_distance_sq(p, acc, UNW, grid4) for p in sample)
    assert np.allclose(h.values, want, rtol=1e-12)
    assert h.theta == "unweighted"


def test_seats_all_to_one_party():
    p = Plan([0, 0, 1, 1, 2, 2])
    r = seats(p, VoteTable(np.ones(6), np.zeros(6)))
    assert (r.seats_a, r.seats_b) == (3, 0)


def test_seats_four_path():
    p = Plan([0, 0, 1, 1])
    r = seats(p, VoteTable([3, 0, 0, 3], [0, 2, 2, 0]))
    assert (r.seats_a, r.seats_b) == (2, 0)
    assert r.shares.tolist() == [0.6, 0.6]


def test_seats_tie():
    r = seats(Plan([0, 0, 1, 1]), VoteTable([1, 1, 5, 0], [2, 0, 1, 1]))
    assert r.ties == (0,)
    assert (r.seats_a, r.seats_b) == (1, 0)


def test_seats_size_mismatch():
    with pytest.raises(AnalysisError):
        seats(Plan([0, 1]), VoteTable([1, 1, 1], [0, 0, 0]))


def test_votes_validation():
    with pytest.raises(AnalysisError):
        VoteTable([1, -1], [0, 0])
    with pytest.raises(AnalysisError):
        VoteTable([0, 0], [0, 0])


def test_seats_histogram_square():
    g = grid(2, 2)
    plans = enumerate_valid_plans(g, 2, ValidityConfig(0.0))
    votes = VoteTable([3, 0, 3, 0], [1, 2, 1, 2])
    # horizontal split: each row 3-3 tie; vertical split: left A 6-2, right B 0-4
    by_hand = {Plan([0, 0, 1, 1]): 0, Plan([0, 1, 0, 1]): 1}
    counts = seats_histogram(plans, votes)
    want = np.zeros(3, dtype=int)
    for p in plans:
        want[by_hand[p]] += 1
    assert counts.tolist() == want.tolist()
    assert seats_histogram(plans[:1], votes).sum() == 1


def test_seats_histogram_counts_sum(grid4_plans):
    sample = random_plans(grid4_plans, 40, np.random.default_rng(6))
    rng = np.random.default_rng(7)
    votes = VoteTable(rng.uniform(0, 10, 16), rng.uniform(0, 10, 16))
    assert seats_histogram(sample, votes).sum() == 40


def test_votes_file_round_trip(tmp_path):
    g = grid(2, 2)
    v = VoteTable([1.5, 0, 2, 1 / 3], [0, 4, 1, 1])
    p = tmp_path / "votes.csv"
    v.save(g, p)
    assert p.read_text().splitlines()[0] == "unit_id,votes_a,votes_b"
    back = VoteTable.load(g, p)
    assert np.array_equal(back.votes_a, v.votes_a) and np.array_equal(back.votes_b, v.votes_b)
    p.write_text("unit_id,votes_a,votes_b\nr0c0,1,1\n")
    with pytest.raises(AnalysisError, match="no votes for unit"):
        VoteTable.load(g, p)
