"""Undirected graphs, geometric generation, edge-list ingestion and the exact
closeness oracle.

Graphs are immutable after construction. Node ids are dense (0..n-1) and
adjacency rows are sorted tuples, so two graphs with the same edges compare
equal and dump to identical bytes.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

__all__ = [
    "Graph",
    "GeometricSpec",
    "GraphError",
    "EdgeListError",
    "load_edge_list",
    "load_dump",
    "load_graph",
    "dump",
    "generate_geometric",
    "geometric_graph_from_points",
    "bfs_distances",
    "exact_closeness",
    "exact_closeness_ratio",
    "closeness_all",
    "hop_distance",
    "diameter",
    "exact_leader",
    "distance_profile",
    "argmax_closeness",
]

REJECT = "reject-disconnected"
LARGEST = "take-largest-component"


class GraphError(ValueError):
    pass


class EdgeListError(GraphError):
    def __init__(self, lineno: int, line: str, reason: str = "expected two non-negative integers"):
        super().__init__(f"line {lineno}: {reason}: {line!r}")
        self.lineno = lineno


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph on dense ids ``0..n-1``."""

    n: int
    adjacency: tuple[tuple[int, ...], ...]
    edge_count: int = field(init=False)

    def __post_init__(self):
        if len(self.adjacency) != self.n:
            raise GraphError(f"adjacency has {len(self.adjacency)} rows for n={self.n}")
        total = 0
        for i, row in enumerate(self.adjacency):
            if i in row:
                raise GraphError(f"self-loop at {i}")
            if any(row[k] >= row[k + 1] for k in range(len(row) - 1)):
                raise GraphError(f"adjacency row {i} is not strictly increasing")
            total += len(row)
        if total % 2:
            raise GraphError("adjacency is not symmetric")
        object.__setattr__(self, "edge_count", total // 2)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "Graph":
        rows: list[set[int]] = [set() for _ in range(n)]
        for u, v in edges:
            if u == v:
                continue
            if not (0 <= u < n and 0 <= v < n):
                raise GraphError(f"edge ({u}, {v}) out of range for n={n}")
            rows[u].add(v)
            rows[v].add(u)
        return cls(n, tuple(tuple(sorted(r)) for r in rows))

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self.adjacency[i]

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def degrees(self) -> np.ndarray:
        return np.fromiter((len(r) for r in self.adjacency), dtype=np.int64, count=self.n)

    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u, row in enumerate(self.adjacency) for v in row if u < v]

    def has_edge(self, u: int, v: int) -> bool:
        return v in self.adjacency[u]

    def to_csr(self) -> sparse.csr_matrix:
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(r) for r in self.adjacency])
        indices = np.fromiter((v for r in self.adjacency for v in r), dtype=np.int64,
                              count=int(indptr[-1]))
        data = np.ones(len(indices), dtype=np.int8)
        return sparse.csr_matrix((data, indices, indptr), shape=(self.n, self.n))

    def components(self) -> list[list[int]]:
        """Connected components, each sorted, ordered by smallest member."""
        ncomp, labels = csgraph.connected_components(self.to_csr(), directed=False)
        comps: list[list[int]] = [[] for _ in range(ncomp)]
        for v, c in enumerate(labels):
            comps[c].append(v)
        comps.sort(key=lambda c: c[0])
        return comps

    def is_connected(self) -> bool:
        if self.n == 0:
            return False
        return len(bfs_distances(self, 0)) == self.n

    def subgraph(self, nodes: Sequence[int]) -> tuple["Graph", list[int]]:
        """Induced subgraph relabelled in the given node order."""
        index = {v: k for k, v in enumerate(nodes)}
        edges = [(index[u], index[v]) for u in nodes for v in self.adjacency[u]
                 if v in index and u < v]
        return Graph.from_edges(len(nodes), edges), list(nodes)


# ---------------------------------------------------------------------------
# ingestion / serialization
# ---------------------------------------------------------------------------

def _as_text(text: bytes | str) -> str:
    if isinstance(text, bytes):
        return text.decode("utf-8")
    return text


def load_edge_list(text: bytes | str, policy: str = LARGEST) -> tuple[Graph, list[int]]:
    """Parse a SNAP-style edge list.

    Returns the graph together with the remap table: ``remap[k]`` is the
    original id of dense node ``k``. Ids are assigned in order of first
    appearance. Duplicate edges and self-loops are dropped.
    """
    if policy not in (REJECT, LARGEST):
        raise ValueError(f"unknown policy {policy!r}")
    ids: dict[int, int] = {}
    edges: list[tuple[int, int]] = []
    for lineno, raw in enumerate(_as_text(text).splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise EdgeListError(lineno, raw)
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise EdgeListError(lineno, raw) from None
        if u < 0 or v < 0:
            raise EdgeListError(lineno, raw)
        a = ids.setdefault(u, len(ids))
        b = ids.setdefault(v, len(ids))
        edges.append((a, b))
    if not ids:
        raise GraphError("empty graph")
    g = Graph.from_edges(len(ids), edges)
    if g.edge_count == 0:
        raise GraphError("empty graph: no edges besides self-loops")
    remap = list(ids)
    comps = g.components()
    if len(comps) == 1:
        return g, remap
    if policy == REJECT:
        raise GraphError(f"graph is disconnected ({len(comps)} components)")
    best = max(comps, key=len)  # ties: component holding the smallest id
    best.sort()  # first-appearance order == dense id order
    sub, kept = g.subgraph(best)
    if sub.n < 2:
        raise GraphError("largest component has a single node")
    return sub, [remap[k] for k in kept]


def dump(g: Graph) -> str:
    """Serialize as ``n m`` followed by sorted ``u v`` lines with ``u < v``."""
    lines = [f"{g.n} {g.edge_count}"]
    lines.extend(f"{u} {v}" for u, v in g.edges())
    return "\n".join(lines) + "\n"


def load_dump(text: bytes | str) -> Graph:
    lines = [ln for ln in _as_text(text).splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise GraphError("empty graph dump")
    try:
        n, m = (int(x) for x in lines[0].split())
        edges = [tuple(int(x) for x in ln.split()) for ln in lines[1:]]
    except ValueError as exc:
        raise GraphError(f"malformed graph dump: {exc}") from None
    if len(edges) != m or any(len(e) != 2 for e in edges):
        raise GraphError(f"dump header announces {m} edges, found {len(edges)}")
    return Graph.from_edges(n, edges)


def _looks_like_dump(text: str) -> bool:
    rows = []
    for ln in text.splitlines():
        s = ln.strip()
        if s and not s.startswith("#"):
            rows.append(s.split())
    if len(rows) < 2 or any(len(r) != 2 for r in rows):
        return False
    try:
        n, m = int(rows[0][0]), int(rows[0][1])
        body = [(int(a), int(b)) for a, b in rows[1:]]
    except ValueError:
        return False
    if m != len(body) or body != sorted(body):
        return False
    seen = {x for e in body for x in e}
    return all(u < v for u, v in body) and seen == set(range(n))


def load_graph(text: bytes | str, policy: str = LARGEST) -> tuple[Graph, list[int]]:
    """Load either a graph dump or a raw edge list (detected from content)."""
    text = _as_text(text)
    if _looks_like_dump(text):
        g = load_dump(text)
        if not g.is_connected():
            raise GraphError("graph dump is disconnected")
        return g, list(range(g.n))
    return load_edge_list(text, policy)


# ---------------------------------------------------------------------------
# geometric generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeometricSpec:
    n: int
    grid_side: int = 250
    range: float = 10.0
    seed: int = 0
    max_retries: int = 1000
    # "resample" keeps n exact; "largest" keeps the biggest component of one draw
    connectivity: str = "resample"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.n > self.grid_side ** 2:
            raise ValueError(f"n={self.n} exceeds grid capacity {self.grid_side}^2")
        if not self.range > 0:
            raise ValueError("range must be positive")
        if self.connectivity not in ("resample", "largest"):
            raise ValueError(f"unknown connectivity mode {self.connectivity!r}")


def geometric_graph_from_points(points: np.ndarray, radius: float) -> Graph:
    """Connect every pair of points strictly closer than ``radius``."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n < 2:
        return Graph.from_edges(n, [])
    pairs = cKDTree(pts).query_pairs(radius, output_type="ndarray")
    if len(pairs):
        d2 = ((pts[pairs[:, 0]] - pts[pairs[:, 1]]) ** 2).sum(axis=1)
        pairs = pairs[d2 < radius * radius]
    return Graph.from_edges(n, map(tuple, pairs.tolist()))


def _sample_points(spec: GeometricSpec, attempt: int) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, attempt])
    cells = rng.choice(spec.grid_side ** 2, size=spec.n, replace=False)
    return np.column_stack(np.divmod(cells, spec.grid_side))


def generate_geometric(spec: GeometricSpec) -> Graph:
    """Random geometric graph on an integer lattice; a pure function of ``spec``."""
    if spec.connectivity == "largest":
        g = geometric_graph_from_points(_sample_points(spec, 0), spec.range)
        best = max(g.components(), key=len)
        if len(best) < 2:
            raise GraphError("largest component is a single node; increase range or n")
        return g.subgraph(best)[0]
    for attempt in range(spec.max_retries):
        g = geometric_graph_from_points(_sample_points(spec, attempt), spec.range)
        if g.is_connected():
            return g
    raise GraphError(
        f"no connected sample after {spec.max_retries} attempts "
        f"(n={spec.n}, grid={spec.grid_side}, range={spec.range}); "
        "use a larger range, a smaller grid or fewer nodes")


# ---------------------------------------------------------------------------
# distances and closeness
# ---------------------------------------------------------------------------

def bfs_distances(g: Graph, source: int) -> dict[int, int]:
    _check_node(g, source)
    dist = {source: 0}
    queue = deque([source])
    adj = g.adjacency
    while queue:
        u = queue.popleft()
        du = dist[u] + 1
        for v in adj[u]:
            if v not in dist:
                dist[v] = du
                queue.append(v)
    return dist


def _check_node(g: Graph, i: int) -> None:
    if not (0 <= i < g.n):
        raise IndexError(f"node {i} not in graph with n={g.n}")


def exact_closeness_ratio(g: Graph, i: int) -> Fraction:
    dist = bfs_distances(g, i)
    if len(dist) != g.n:
        raise GraphError("closeness requires a connected graph")
    total = sum(dist.values())
    if total == 0:
        return Fraction(0)
    return Fraction(g.n - 1, total)


def exact_closeness(g: Graph, i: int) -> float:
    """``(n - 1) / sum_j dist(i, j)``."""
    return float(exact_closeness_ratio(g, i))


def _distance_rows(g: Graph, chunk: int = 512):
    csr = g.to_csr()
    for start in range(0, g.n, chunk):
        idx = np.arange(start, min(start + chunk, g.n))
        d = csgraph.shortest_path(csr, method="D", directed=False, unweighted=True, indices=idx)
        yield idx, d


def closeness_all(g: Graph) -> list[Fraction]:
    """Exact closeness of every node as fractions."""
    out: list[Fraction] = []
    for _, d in _distance_rows(g):
        if not np.isfinite(d).all():
            raise GraphError("closeness requires a connected graph")
        sums = d.sum(axis=1).astype(np.int64)
        out.extend(Fraction(g.n - 1, int(s)) if s else Fraction(0) for s in sums)
    return out


def hop_distance(g: Graph, i: int, j: int) -> int:
    _check_node(g, j)
    if i == j:
        _check_node(g, i)
        return 0
    dist = bfs_distances(g, i)
    if j not in dist:
        raise GraphError(f"{i} and {j} are disconnected")
    return dist[j]


def diameter(g: Graph) -> int:
    best = 0
    for _, d in _distance_rows(g):
        if not np.isfinite(d).all():
            raise GraphError("diameter of a disconnected graph is infinite")
        best = max(best, int(d.max()))
    return best


def distance_profile(g: Graph) -> tuple[int, list[Fraction]]:
    """Diameter and exact closeness of every node from one all-pairs pass."""
    best = 0
    out: list[Fraction] = []
    for _, d in _distance_rows(g):
        if not np.isfinite(d).all():
            raise GraphError("graph is disconnected")
        best = max(best, int(d.max()))
        sums = d.sum(axis=1).astype(np.int64)
        out.extend(Fraction(g.n - 1, int(s)) if s else Fraction(0) for s in sums)
    return best, out


def argmax_closeness(scores: Sequence[Fraction]) -> int:
    return max(range(len(scores)), key=lambda i: (scores[i], -i))


def exact_leader(g: Graph) -> int:
    """Node of maximum exact closeness; ties go to the smallest id."""
    return argmax_closeness(closeness_all(g))
