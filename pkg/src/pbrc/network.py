"""Directed communication graphs and token flooding.

Flooding: every round each agent forwards everything it knows to every
out-neighbour. Self-loops are ignored because an agent always keeps its own
tokens. Undirected graphs are stored as symmetric edge sets.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

INF = math.inf


class SizeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Graph:
    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        edges = frozenset((int(u), int(v)) for u, v in self.edges)
        for u, v in edges:
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise ValueError(f"edge ({u},{v}) outside 0..{self.n - 1}")
        object.__setattr__(self, "edges", edges)
        out = [[] for _ in range(self.n)]
        inn = [[] for _ in range(self.n)]
        for u, v in sorted(edges):
            if u != v:
                out[u].append(v)
                inn[v].append(u)
        object.__setattr__(self, "_out", tuple(tuple(x) for x in out))
        object.__setattr__(self, "_in", tuple(tuple(x) for x in inn))

    def out_neighbors(self, u: int) -> tuple[int, ...]:
        return self._out[u]

    def in_neighbors(self, u: int) -> tuple[int, ...]:
        return self._in[u]

    def with_edges(self, extra: Iterable[tuple[int, int]]) -> "Graph":
        return Graph(self.n, self.edges | frozenset(extra))

    def undirected_degree(self) -> np.ndarray:
        return np.array([len(set(self._out[i]) | set(self._in[i])) for i in range(self.n)])

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for u, v in self.edges:
            if u != v:
                a[u, v] = 1.0
        return a


def undirected(n: int, pairs: Iterable[tuple[int, int]]) -> Graph:
    e = set()
    for u, v in pairs:
        e.add((u, v))
        e.add((v, u))
    return Graph(n, frozenset(e))


def ring(n: int) -> Graph:
    return undirected(n, [(i, (i + 1) % n) for i in range(n)])


def star(n: int) -> Graph:
    return undirected(n, [(0, i) for i in range(1, n)])


def complete(n: int) -> Graph:
    return Graph(n, frozenset((u, v) for u in range(n) for v in range(n) if u != v))


def grid(rows: int, cols: int) -> Graph:
    pairs = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                pairs.append((i, i + 1))
            if r + 1 < rows:
                pairs.append((i, i + cols))
    return undirected(rows * cols, pairs)


def path(n: int) -> Graph:
    return undirected(n, [(i, i + 1) for i in range(n - 1)])


def erdos_renyi(n: int, p: float, rng: np.random.Generator, connected: bool = True, directed: bool = False,
                max_tries: int = 10_000) -> Graph:
    """G(n,p); with ``connected`` resample until strongly connected."""
    for _ in range(max_tries):
        if directed:
            m = rng.random((n, n)) < p
            np.fill_diagonal(m, False)
            g = Graph(n, frozenset(zip(*np.nonzero(m))))
        else:
            iu = np.triu_indices(n, 1)
            keep = rng.random(len(iu[0])) < p
            g = undirected(n, zip(iu[0][keep], iu[1][keep]))
        if not connected or diameter(g) < INF:
            return g
    raise RuntimeError("could not sample a connected graph")


def bfs_from(g: Graph, u: int) -> list[float]:
    d = [INF] * g.n
    d[u] = 0
    q = deque([u])
    while q:
        x = q.popleft()
        for y in g.out_neighbors(x):
            if d[y] == INF:
                d[y] = d[x] + 1
                q.append(y)
    return d


def all_pairs(g: Graph) -> list[list[float]]:
    return [bfs_from(g, u) for u in range(g.n)]


def dist(g: Graph, u: int, v: int) -> float:
    return bfs_from(g, u)[v]


def diameter(g: Graph) -> float:
    if g.n <= 1:
        return 0
    return max(max(row) for row in all_pairs(g))


@dataclass(frozen=True)
class FloodResult:
    knowledge: tuple[tuple[frozenset, ...], ...]  # knowledge[t][i] = K_i^t, t = 0..T
    exposure: tuple[tuple[frozenset, ...], ...]  # exposure[t][i] = T(E_i^t), t = 0..T-1

    @property
    def horizon(self) -> int:
        return len(self.exposure)

    def trace(self, i: int) -> tuple[frozenset, ...]:
        return tuple(ex[i] for ex in self.exposure)


def unique_placement(n: int) -> dict[int, frozenset]:
    return {i: frozenset({f"tok{i}"}) for i in range(n)}


def flood(g: Graph, placement: Mapping[int, Iterable], T: int) -> FloodResult:
    if T < 0:
        raise ValueError("horizon must be nonnegative")
    k = [frozenset(placement.get(i, ())) for i in range(g.n)]
    know = [tuple(k)]
    expo = []
    for _ in range(T):
        ex = [frozenset().union(*(k[j] for j in g.in_neighbors(i))) for i in range(g.n)]
        k = [k[i] | ex[i] for i in range(g.n)]
        expo.append(tuple(ex))
        know.append(tuple(k))
    return FloodResult(tuple(know), tuple(expo))


def knowledge_by_distance(g: Graph, placement: Mapping[int, Iterable], t: int) -> list[frozenset]:
    """Union of initial placements within directed distance t of each agent."""
    d = all_pairs(g)
    return [
        frozenset().union(*(frozenset(placement.get(j, ())) for j in range(g.n) if d[j][i] <= t))
        for i in range(g.n)
    ]


def reach_equiv(ga: Graph, gb: Graph, T: int) -> bool:
    if ga.n != gb.n:
        raise SizeMismatch(f"{ga.n} vs {gb.n} vertices")
    da, db = all_pairs(ga), all_pairs(gb)
    for u in range(ga.n):
        for v in range(ga.n):
            if min(da[u][v], T + 1) != min(db[u][v], T + 1):
                return False
    return True


def closure_time(g: Graph, placement: Mapping[int, Iterable]) -> float:
    """First round at which every agent holds every placed token."""
    holders: dict = {}
    for j in range(g.n):
        for tok in placement.get(j, ()):
            holders.setdefault(tok, []).append(j)
    d = all_pairs(g)
    worst = 0
    for hs in holders.values():
        for i in range(g.n):
            worst = max(worst, min(d[j][i] for j in hs))
    return worst


def random_dissemination(g: Graph, placement: Mapping[int, Iterable], T: int, rng: np.random.Generator,
                         keep: float = 0.5) -> list[list[frozenset]]:
    """Edge-respecting gossip that forwards a random subset of known tokens on each edge."""
    k = [frozenset(placement.get(i, ())) for i in range(g.n)]
    know = [list(k)]
    for _ in range(T):
        nxt = list(k)
        for u in range(g.n):
            items = sorted(k[u])
            for v in g.out_neighbors(u):
                sent = frozenset(x for x in items if rng.random() < keep)
                nxt[v] = nxt[v] | sent
        k = nxt
        know.append(list(k))
    return know


def load_graph(path: str) -> Graph:
    pairs = []
    nodes = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"bad edge line: {line!r}")
            u, v = int(parts[0]), int(parts[1])
            pairs.append((u, v))
            nodes.update((u, v))
    n = max(nodes) + 1 if nodes else 0
    return Graph(n, frozenset(pairs))


def save_graph(g: Graph, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, v in sorted(g.edges):
            fh.write(f"{u} {v}\n")


def graph_family(name: str, n: int, rng: np.random.Generator | None = None, p: float = 0.3) -> Graph:
    if name == "ring":
        return ring(n)
    if name == "complete":
        return complete(n)
    if name == "star":
        return star(n)
    if name == "grid":
        side = int(round(math.sqrt(n)))
        return grid(side, max(1, n // side))
    if name in ("er", "ER"):
        return erdos_renyi(n, p, rng if rng is not None else np.random.default_rng(0))
    if name == "path":
        return path(n)
    raise ValueError(f"unknown graph family {name!r}")


def shortest_cycle_through(g: Graph, i: int, d: Sequence[Sequence[float]] | None = None) -> float:
    d = all_pairs(g) if d is None else d
    return min((d[i][j] + d[j][i] for j in range(g.n) if j != i), default=INF)
