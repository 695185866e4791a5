"""Shared fixtures and brute-force oracles.

The oracles work on plain Python lists with explicit double loops and
``math.fsum`` so they share no code path with the library.
"""
import math

import numpy as np
import pytest

from districtmaps.districting import Plan, ValidityConfig, enumerate_valid_plans
from districtmaps.graph import grid, path_graph


def oracle_theta(kind, pops, hops, i, j, rate=1.0, matrix=None):
    if kind == "unweighted":
        return 1.0
    if kind == "pop":
        return pops[i] * pops[j]
    if kind == "pathdecay":
        return math.exp(-rate * hops[i][j])
    return matrix[i][j]


def oracle_distance(a1, a2, theta):
    """Half the ordered-pair sum of theta * |A1 - A2|."""
    n = len(a1)
    terms = []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            x = 1 if a1[i] == a1[j] else 0
            y = 1 if a2[i] == a2[j] else 0
            terms.append(0.5 * theta(i, j) * abs(x - y))
    return math.fsum(terms)


def oracle_centroid(assignments):
    n = len(assignments[0])
    T = len(assignments)
    c = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            c[i][j] = sum(1 for a in assignments if a[i] == a[j]) / T
    return c


def oracle_distance_sq_to_matrix(a, c, theta):
    n = len(a)
    terms = []
    for i in range(n):
        for j in range(i + 1, n):
            x = 1.0 if a[i] == a[j] else 0.0
            terms.append(theta(i, j) * (x - c[i][j]) ** 2)
    return math.fsum(terms)


def oracle_hops(g):
    n = g.n
    inf = float("inf")
    d = [[inf] * n for _ in range(n)]
    for i in range(n):
        d[i][i] = 0
    for i, j in g.edges:
        d[i][j] = d[j][i] = 1
    for m in range(n):
        for i in range(n):
            for j in range(n):
                if d[i][m] + d[m][j] < d[i][j]:
                    d[i][j] = d[i][m] + d[m][j]
    return d


def theta_fn(kind, g, rate=1.0, matrix=None):
    pops = list(g.pops)
    hops = oracle_hops(g) if kind == "pathdecay" else None
    return lambda i, j: oracle_theta(kind, pops, hops, i, j, rate, matrix)


@pytest.fixture(scope="session")
def path3():
    return path_graph([1, 1, 1], ids=["a", "b", "c"])


@pytest.fixture(scope="session")
def path3_plans(path3):
    return enumerate_valid_plans(path3, 2, ValidityConfig(1.0))


@pytest.fixture(scope="session")
def grid4():
    return grid(4, 4)


@pytest.fixture(scope="session")
def grid4_plans(grid4):
    # 627 plans of every balance, 70 of them exactly 8/8
    return enumerate_valid_plans(grid4, 2, ValidityConfig(10.0))


def random_plans(plans, T, rng):
    idx = rng.integers(len(plans), size=T)
    return [plans[t] for t in idx]



# acceptance summary: test_acceptance appends (number, ok, detail) here
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
