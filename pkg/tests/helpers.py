"""Graph builders and independent oracles shared by the tests."""
from __future__ import annotations

import itertools

import numpy as np

from mpprune.graph import Graph


def path_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def cycle_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def star_graph(k: int) -> Graph:
    """Center 0, leaves 1..k."""
    return Graph.from_edges(k + 1, [(0, j) for j in range(1, k + 1)])


def complete_graph(n: int) -> Graph:
    return Graph.from_edges(n, itertools.combinations(range(n), 2))


def random_connected(n: int, p: float, seed: int) -> Graph:
    """Random spanning tree plus Erdos-Renyi extras, so the result is connected."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    edges = set()
    for k in range(1, n):
        u, v = int(order[k]), int(order[rng.integers(0, k)])
        edges.add((min(u, v), max(u, v)))
    for u, v in itertools.combinations(range(n), 2):
        if rng.random() < p:
            edges.add((u, v))
    return Graph.from_edges(n, edges)


def floyd_warshall(g: Graph) -> np.ndarray:
    """All-pairs hop distances by the textbook triple loop (vectorized per pivot)."""
    n = g.n
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0)
    for u, v in g.edges():
        d[u, v] = d[v, u] = 1
    for k in range(n):
        d = np.minimum(d, d[:, k:k + 1] + d[k:k + 1, :])
    return d
