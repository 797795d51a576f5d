"""Directed graph model, seeded graph families, and path oracles.

Vertices are integers ``0 .. n_vertices-1``. Edges are ordered pairs with a
stable integer id equal to their position in the edge list. Graphs are
immutable after construction; derived structures (adjacency, flat arrays for
the flow engine) are built lazily and cached.

Conventions fixed here and relied on elsewhere:

* leakage at the source and destination is always 0 (injection and
  extraction happen there; path leakage runs over interior vertices only);
* oracle tie-breaking is the lexicographically smallest vertex sequence;
* a vertex with leakage 1 absorbs all flow, so the min-leakage oracle treats
  it as unreachable-through.
"""

from __future__ import annotations

import heapq
import json
import math
from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np


class GraphError(ValueError):
    """Raised for malformed graphs, paths, or generator preconditions."""


@dataclass(frozen=True)
class Path:
    """A simple s->d path, stored as its vertex sequence."""

    vertices: Tuple[int, ...]

    @property
    def length(self) -> int:
        """Number of edges."""
        return len(self.vertices) - 1

    def edge_pairs(self) -> Tuple[Tuple[int, int], ...]:
        return tuple(zip(self.vertices[:-1], self.vertices[1:]))

    def __str__(self) -> str:
        return ">".join(str(v) for v in self.vertices)


class DirectedGraph:
    """Immutable directed graph with designated source/destination and
    per-vertex leakage in [0, 1]."""

    def __init__(
        self,
        n_vertices: int,
        edges: Sequence[Tuple[int, int]],
        source: int,
        destination: int,
        leakage: Optional[Union[Sequence[float], Mapping[int, float]]] = None,
    ) -> None:
        if n_vertices < 2:
            raise GraphError("graph needs at least 2 vertices")
        if not (0 <= source < n_vertices and 0 <= destination < n_vertices):
            raise GraphError("source/destination out of range")
        if source == destination:
            raise GraphError("source and destination must differ")

        self.n_vertices = int(n_vertices)
        self.source = int(source)
        self.destination = int(destination)

        edge_ids: Dict[Tuple[int, int], int] = {}
        clean: List[Tuple[int, int]] = []
        for u, v in edges:
            u, v = int(u), int(v)
            if not (0 <= u < n_vertices and 0 <= v < n_vertices):
                raise GraphError(f"edge ({u},{v}) endpoint out of range")
            if u == v:
                raise GraphError(f"self-loop ({u},{v}) not allowed")
            if (u, v) in edge_ids:
                raise GraphError(f"duplicate edge ({u},{v})")
            edge_ids[(u, v)] = len(clean)
            clean.append((u, v))
        self.edges: Tuple[Tuple[int, int], ...] = tuple(clean)
        self._edge_ids = edge_ids

        lk = np.zeros(n_vertices, dtype=float)
        if leakage is not None:
            if isinstance(leakage, Mapping):
                for v, l in leakage.items():
                    lk[int(v)] = float(l)
            else:
                lk = np.asarray(leakage, dtype=float).copy()
                if lk.shape != (n_vertices,):
                    raise GraphError("leakage array length must equal n_vertices")
        if np.any(lk < 0.0) or np.any(lk > 1.0):
            raise GraphError("leakage values must lie in [0, 1]")
        if lk[self.source] != 0.0 or lk[self.destination] != 0.0:
            raise GraphError("leakage at source and destination must be 0")
        lk.setflags(write=False)
        self.leakage = lk

        out: List[List[int]] = [[] for _ in range(n_vertices)]
        inc: List[List[int]] = [[] for _ in range(n_vertices)]
        for eid, (u, v) in enumerate(self.edges):
            out[u].append(eid)
            inc[v].append(eid)
        self._out = tuple(tuple(e) for e in out)
        self._in = tuple(tuple(e) for e in inc)
        self._arrays: Optional[GraphArrays] = None

    # -- basic queries ----------------------------------------------------

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_id(self, u: int, v: int) -> int:
        try:
            return self._edge_ids[(u, v)]
        except KeyError:
            raise GraphError(f"no edge ({u},{v})") from None

    def has_edge(self, u: int, v: int) -> bool:
        return (u, v) in self._edge_ids

    def out_edges(self, v: int) -> Tuple[int, ...]:
        return self._out[v]

    def in_edges(self, v: int) -> Tuple[int, ...]:
        return self._in[v]

    def out_neighbors(self, v: int) -> List[int]:
        return [self.edges[e][1] for e in self._out[v]]

    def in_neighbors(self, v: int) -> List[int]:
        return [self.edges[e][0] for e in self._in[v]]

    def with_leakage(
        self,
        leakage: Union[Sequence[float], Mapping[int, float]],
        zero_endpoints: bool = True,
    ) -> "DirectedGraph":
        """Copy of this graph with new leakage values.

        With ``zero_endpoints`` (default) the source/destination entries are
        forced to 0 regardless of the input, matching the model convention.
        """
        if isinstance(leakage, Mapping):
            lk = np.array(self.leakage, dtype=float)
            for v, l in leakage.items():
                lk[int(v)] = float(l)
        else:
            lk = np.asarray(leakage, dtype=float).copy()
        if zero_endpoints:
            lk[self.source] = 0.0
            lk[self.destination] = 0.0
        return DirectedGraph(self.n_vertices, self.edges, self.source, self.destination, lk)

    # -- flat arrays for the flow engine ----------------------------------

    @property
    def arrays(self) -> "GraphArrays":
        if self._arrays is None:
            self._arrays = GraphArrays(self)
        return self._arrays

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "vertices": self.n_vertices,
            "edges": [[u, v] for (u, v) in self.edges],
            "source": self.source,
            "destination": self.destination,
            "leakage": {str(v): float(l) for v, l in enumerate(self.leakage) if l != 0.0},
        }

    @classmethod
    def from_json_dict(cls, doc: Mapping) -> "DirectedGraph":
        leak = {int(k): float(v) for k, v in doc.get("leakage", {}).items()}
        return cls(
            int(doc["vertices"]),
            [tuple(e) for e in doc["edges"]],
            int(doc["source"]),
            int(doc["destination"]),
            leak,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DirectedGraph":
        return cls.from_json_dict(json.loads(text))

    def to_dot(
        self,
        edge_weights: Optional[Sequence[float]] = None,
        name: str = "flow",
        max_penwidth: float = 6.0,
    ) -> str:
        """DOT export; optional per-edge weights scale pen widths (weights are
        drawn green), vertex size shrinks with leakage."""
        lines = [f"digraph {name} {{"]
        for v in range(self.n_vertices):
            size = 0.25 + 0.55 * (1.0 - float(self.leakage[v]))
            attrs = [f'width="{size:.3f}"', f'height="{size:.3f}"', "fixedsize=true"]
            if v == self.source:
                attrs.append('shape="box"')
                attrs.append('label="s"')
            elif v == self.destination:
                attrs.append('shape="box"')
                attrs.append('label="d"')
            else:
                attrs.append(f'label="{v}"')
            lines.append(f"  {v} [{', '.join(attrs)}];")
        wmax = 0.0
        if edge_weights is not None:
            wmax = max((float(w) for w in edge_weights), default=0.0)
        for eid, (u, v) in enumerate(self.edges):
            if edge_weights is None:
                lines.append(f"  {u} -> {v};")
                continue
            w = float(edge_weights[eid])
            pen = 0.5 + (max_penwidth * w / wmax if wmax > 0 else 0.0)
            color = "green" if w > 0 else "gray"
            lines.append(
                f'  {u} -> {v} [penwidth="{pen:.3f}", color="{color}", weight_value="{w:.6g}"];'
            )
        lines.append("}")
        return "\n".join(lines)


class GraphArrays:
    """Flat numpy views of a graph used by the flow engine."""

    def __init__(self, g: DirectedGraph) -> None:
        self.n = g.n_vertices
        self.m = g.n_edges
        self.tails = np.fromiter((u for u, _ in g.edges), dtype=np.int64, count=g.n_edges)
        self.heads = np.fromiter((v for _, v in g.edges), dtype=np.int64, count=g.n_edges)
        self.out_deg = np.bincount(self.tails, minlength=self.n).astype(np.int64)
        self.in_deg = np.bincount(self.heads, minlength=self.n).astype(np.int64)
        self.surv = 1.0 - np.asarray(g.leakage, dtype=float)
        self.source = g.source
        self.destination = g.destination
        # pass-through / branch structure for the general (two-branch) rule
        self._general: Optional[tuple] = None
        self._graph = g

    def general_structure(self):
        """(pass_f_eids, pass_f_tails, branch_out, pass_b_eids, pass_b_heads,
        branch_in); only valid on two-parallel-path graphs."""
        if self._general is None:
            g = self._graph
            if two_path_structure(g) is None:
                raise GraphError("general decision rules apply only to two-parallel-path graphs")
            pf, pft, bo = [], [], []
            for v in range(self.n):
                es = g.out_edges(v)
                if len(es) == 1:
                    pf.append(es[0])
                    pft.append(v)
                elif len(es) == 2:
                    bo.append((v, es[0], es[1]))
            pb, pbh, bi = [], [], []
            for v in range(self.n):
                es = g.in_edges(v)
                if len(es) == 1:
                    pb.append(es[0])
                    pbh.append(v)
                elif len(es) == 2:
                    bi.append((v, es[0], es[1]))
            self._general = (
                np.asarray(pf, dtype=np.int64),
                np.asarray(pft, dtype=np.int64),
                tuple(bo),
                np.asarray(pb, dtype=np.int64),
                np.asarray(pbh, dtype=np.int64),
                tuple(bi),
            )
        return self._general


# ---------------------------------------------------------------------------
# Two parallel paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TwoPathGraph:
    """Two vertex-disjoint parallel s->d paths: ``top`` with m edges and
    ``bottom`` with n edges."""

    graph: DirectedGraph
    top: Path
    bottom: Path

    @property
    def m(self) -> int:
        return self.top.length

    @property
    def n(self) -> int:
        return self.bottom.length

    @property
    def window(self) -> int:
        """Potential window, the longer of the two path lengths."""
        return max(self.m, self.n)

    # branch edge ids at the source and destination
    @property
    def s_top_eid(self) -> int:
        return self.graph.edge_id(self.top.vertices[0], self.top.vertices[1])

    @property
    def s_bottom_eid(self) -> int:
        return self.graph.edge_id(self.bottom.vertices[0], self.bottom.vertices[1])

    @property
    def d_top_eid(self) -> int:
        return self.graph.edge_id(self.top.vertices[-2], self.top.vertices[-1])

    @property
    def d_bottom_eid(self) -> int:
        return self.graph.edge_id(self.bottom.vertices[-2], self.bottom.vertices[-1])

    def branch_eids(self, branch: str) -> Tuple[int, int]:
        """(s-side, d-side) edge ids of a branch ('top' or 'bottom')."""
        if branch == "top":
            return self.s_top_eid, self.d_top_eid
        if branch == "bottom":
            return self.s_bottom_eid, self.d_bottom_eid
        raise ValueError(f"unknown branch {branch!r}")

    def path_eids(self, branch: str) -> List[int]:
        path = self.top if branch == "top" else self.bottom
        return [self.graph.edge_id(u, v) for u, v in path.edge_pairs()]

    @property
    def leak_top(self) -> float:
        return path_leakage(self.graph, self.top)

    @property
    def leak_bottom(self) -> float:
        return path_leakage(self.graph, self.bottom)

    @property
    def surv_top(self) -> float:
        return 1.0 - self.leak_top

    @property
    def surv_bottom(self) -> float:
        return 1.0 - self.leak_bottom


def build_two_path(
    m: int,
    n: int,
    leak_top: Sequence[float],
    leak_bottom: Sequence[float],
) -> TwoPathGraph:
    """Two parallel paths with m and n edges and the given interior leakages
    (lengths m-1 and n-1, assigned in path order)."""
    if m < 2 or n < 2:
        raise GraphError("both paths need at least 2 edges (one interior vertex)")
    if len(leak_top) != m - 1 or len(leak_bottom) != n - 1:
        raise GraphError(
            f"leakage lists must have lengths {m - 1} and {n - 1}, "
            f"got {len(leak_top)} and {len(leak_bottom)}"
        )
    for l in list(leak_top) + list(leak_bottom):
        if not (0.0 <= float(l) < 1.0):
            raise GraphError("interior leakage must lie in [0, 1)")

    s = 0
    d = m + n - 1
    top_vertices = [s] + list(range(1, m)) + [d]
    bottom_vertices = [s] + list(range(m, m + n - 1)) + [d]
    edges = list(zip(top_vertices[:-1], top_vertices[1:])) + list(
        zip(bottom_vertices[:-1], bottom_vertices[1:])
    )
    leakage = np.zeros(m + n, dtype=float)
    for v, l in zip(top_vertices[1:-1], leak_top):
        leakage[v] = float(l)
    for v, l in zip(bottom_vertices[1:-1], leak_bottom):
        leakage[v] = float(l)
    g = DirectedGraph(m + n, edges, s, d, leakage)
    return TwoPathGraph(g, Path(tuple(top_vertices)), Path(tuple(bottom_vertices)))


def build_two_path_survival(m: int, n: int, surv_top: float, surv_bottom: float) -> TwoPathGraph:
    """Two-path graph whose branch survival products equal the given values,
    spread uniformly over the interior vertices."""
    if not (0.0 < surv_top <= 1.0 and 0.0 < surv_bottom <= 1.0):
        raise GraphError("survival factors must lie in (0, 1]")
    lt = 1.0 - surv_top ** (1.0 / (m - 1))
    lb = 1.0 - surv_bottom ** (1.0 / (n - 1))
    return build_two_path(m, n, [lt] * (m - 1), [lb] * (n - 1))


def two_path_structure(graph: DirectedGraph) -> Optional[Tuple[Path, Path]]:
    """Decompose ``graph`` into two parallel s->d paths, or None.

    Requires: s has out-degree 2 / in-degree 0, d has in-degree 2 /
    out-degree 0, every other vertex has in-degree 1 and out-degree 1.
    """
    s, d = graph.source, graph.destination
    for v in range(graph.n_vertices):
        od, idg = len(graph.out_edges(v)), len(graph.in_edges(v))
        if v == s:
            if od != 2 or idg != 0:
                return None
        elif v == d:
            if od != 0 or idg != 2:
                return None
        elif od != 1 or idg != 1:
            return None

    def walk(first: int) -> Optional[List[int]]:
        seq = [s, first]
        seen = {s, first}
        cur = first
        while cur != d:
            nxts = graph.out_neighbors(cur)
            if len(nxts) != 1 or nxts[0] in seen and nxts[0] != d:
                return None
            cur = nxts[0]
            if cur in seen and cur != d:
                return None
            seq.append(cur)
            seen.add(cur)
        return seq

    first_a, first_b = sorted(graph.out_neighbors(s))
    pa, pb = walk(first_a), walk(first_b)
    if pa is None or pb is None:
        return None
    if set(pa[1:-1]) & set(pb[1:-1]):
        return None
    if len(pa) < 3 or len(pb) < 3:
        return None
    return Path(tuple(pa)), Path(tuple(pb))


# ---------------------------------------------------------------------------
# Random graph families (simulation protocol)
# ---------------------------------------------------------------------------


def gen_gnp(n: int, p: float, seed: int) -> DirectedGraph:
    """Directed G(n, p): each ordered pair (i, j), i != j, is an edge with
    probability p. Vertex 0 is the source, vertex n-1 the destination.
    Leakage starts at 0 and is assigned separately."""
    if n < 2:
        raise GraphError("n must be >= 2")
    if not (0.0 <= p <= 1.0):
        raise GraphError("p must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    mat = rng.random((n, n)) < p
    np.fill_diagonal(mat, False)
    edges = [(int(u), int(v)) for u, v in np.argwhere(mat)]
    return DirectedGraph(n, edges, 0, n - 1)


def gen_banded_gnp(n: int, p: float, k: int, seed: int) -> DirectedGraph:
    """G(n, p) restricted to pairs with |i - j| <= k, forcing long routes."""
    if n < 2:
        raise GraphError("n must be >= 2")
    if k < 1:
        raise GraphError("k must be >= 1")
    rng = np.random.default_rng(seed)
    mat = rng.random((n, n)) < p
    np.fill_diagonal(mat, False)
    idx = np.arange(n)
    band = np.abs(idx[:, None] - idx[None, :]) <= k
    mat &= band
    edges = [(int(u), int(v)) for u, v in np.argwhere(mat)]
    return DirectedGraph(n, edges, 0, n - 1)


def gen_grid(rows: int, cols: int) -> DirectedGraph:
    """Grid with rightward and downward edges; source top-left, destination
    bottom-right."""
    if rows < 2 or cols < 2:
        raise GraphError("rows and cols must be >= 2")
    edges = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                edges.append((v, v + 1))
            if r + 1 < rows:
                edges.append((v, v + cols))
    return DirectedGraph(rows * cols, edges, 0, rows * cols - 1)


def plant_path(
    graph: DirectedGraph, length: int, seed: Optional[int] = None
) -> Tuple[DirectedGraph, Path]:
    """Add a fresh s->d chain of ``length`` edges through new interior
    vertices, strictly shorter than the current shortest path, so the result
    has a unique shortest path equal to the planted one.

    ``seed`` is accepted for interface parity with the other generators; the
    fresh-chain construction is fully deterministic.
    """
    del seed
    if length < 1:
        raise GraphError("planted length must be >= 1")
    cur = shortest_path(graph)
    cur_len = cur.length if cur is not None else math.inf
    if not length < cur_len:
        raise GraphError(
            f"planted length {length} must be strictly shorter than the "
            f"current shortest path ({cur_len})"
        )
    n0 = graph.n_vertices
    new_vertices = list(range(n0, n0 + length - 1))
    chain = [graph.source] + new_vertices + [graph.destination]
    edges = list(graph.edges) + list(zip(chain[:-1], chain[1:]))
    leakage = np.zeros(n0 + length - 1, dtype=float)
    leakage[:n0] = graph.leakage
    g2 = DirectedGraph(n0 + length - 1, edges, graph.source, graph.destination, leakage)
    return g2, Path(tuple(chain))


def plant_band_ladder(graph: DirectedGraph, k: int) -> Tuple[DirectedGraph, Path]:
    """Plant the fixed ladder pattern used with banded graphs: hops through
    vertices k, 2(k+1)-1, 3(k+1)-1, ... (the 1-based protocol pattern
    (1, k+1), (k+1, 2(k+1)), ... stored 0-based), ending at the destination."""
    n = graph.n_vertices
    if n < k + 2:
        raise GraphError("graph too small for the ladder pattern")
    chain = [graph.source]
    j = 1
    while True:
        v = j * (k + 1) - 1  # 0-based id of 1-based vertex j*(k+1)
        if v >= graph.destination:
            break
        chain.append(v)
        j += 1
    chain.append(graph.destination)
    edges = list(graph.edges)
    for u, v in zip(chain[:-1], chain[1:]):
        if not graph.has_edge(u, v):
            edges.append((u, v))
    g2 = DirectedGraph(n, edges, graph.source, graph.destination, graph.leakage)
    return g2, Path(tuple(chain))


# ---------------------------------------------------------------------------
# Path oracles
# ---------------------------------------------------------------------------


def validate_path(graph: DirectedGraph, path: Path) -> None:
    vs = path.vertices
    if len(vs) < 2:
        raise GraphError("path needs at least one edge")
    if vs[0] != graph.source or vs[-1] != graph.destination:
        raise GraphError("path must start at the source and end at the destination")
    if len(set(vs)) != len(vs):
        raise GraphError("path repeats a vertex")
    for u, v in path.edge_pairs():
        if not graph.has_edge(u, v):
            raise GraphError(f"path uses missing edge ({u},{v})")


def path_leakage(graph: DirectedGraph, path: Path) -> float:
    """Fraction of flow lost traversing ``path``: 1 - prod over interior
    vertices of (1 - leakage)."""
    validate_path(graph, path)
    surv = 1.0
    for v in path.vertices[1:-1]:
        surv *= 1.0 - float(graph.leakage[v])
    return 1.0 - surv


def shortest_path(graph: DirectedGraph) -> Optional[Path]:
    """Minimum-edge-count s->d path by BFS; lexicographically smallest vertex
    sequence among ties; None if unreachable."""
    dist = _bfs_dist_to_destination(graph)
    s = graph.source
    if dist[s] < 0:
        return None
    seq = [s]
    cur = s
    while cur != graph.destination:
        nxt = min(v for v in graph.out_neighbors(cur) if dist[v] == dist[cur] - 1)
        seq.append(nxt)
        cur = nxt
    return Path(tuple(seq))


def _bfs_dist_to_destination(graph: DirectedGraph) -> List[int]:
    dist = [-1] * graph.n_vertices
    d = graph.destination
    dist[d] = 0
    q = deque([d])
    while q:
        v = q.popleft()
        for u in graph.in_neighbors(v):
            if dist[u] < 0:
                dist[u] = dist[v] + 1
                q.append(u)
    return dist


def count_shortest_paths(graph: DirectedGraph) -> int:
    """Number of distinct minimum-length s->d paths (0 if unreachable)."""
    dist = _bfs_dist_to_destination(graph)
    if dist[graph.source] < 0:
        return 0
    counts: Dict[int, int] = {graph.destination: 1}

    def count(v: int) -> int:
        if v in counts:
            return counts[v]
        total = sum(count(w) for w in graph.out_neighbors(v) if dist[w] == dist[v] - 1)
        counts[v] = total
        return total

    # iterative fill by increasing distance to avoid recursion limits
    order = sorted((v for v in range(graph.n_vertices) if dist[v] >= 0), key=lambda v: dist[v])
    for v in order:
        count(v)
    return counts[graph.source]


def min_leakage_path(graph: DirectedGraph) -> Optional[Path]:
    """s->d path maximizing the interior survival product, found as a
    shortest path under additive weights -ln(1 - l_v) per interior vertex.
    Vertices with leakage 1 are unreachable-through. Ties break to the
    lexicographically smallest vertex sequence."""
    n = graph.n_vertices
    d = graph.destination

    def vertex_weight(v: int) -> float:
        if v == d:
            return 0.0
        l = float(graph.leakage[v])
        if l >= 1.0:
            return math.inf
        return -math.log1p(-l)

    w = [vertex_weight(v) for v in range(n)]
    dist = [math.inf] * n
    dist[d] = 0.0
    heap: List[Tuple[float, int]] = [(0.0, d)]
    while heap:
        dv, v = heapq.heappop(heap)
        if dv > dist[v]:
            continue
        for u in graph.in_neighbors(v):
            cand = w[v] + dv
            if cand < dist[u]:
                dist[u] = cand
                heapq.heappush(heap, (cand, u))
    s = graph.source
    if not math.isfinite(dist[s]):
        return None

    def on_min_path(v: int, cur: int) -> bool:
        return v != s and math.isfinite(dist[v]) and dist[cur] == w[v] + dist[v]

    def can_finish(v: int, blocked: set) -> bool:
        # equality-chain reachability of d from v avoiding blocked; needed
        # because zero-leakage vertices tie and a naive greedy can dead-end
        stack = [v]
        seen = set(blocked)
        seen.add(v)
        while stack:
            x = stack.pop()
            if x == d:
                return True
            for y in graph.out_neighbors(x):
                if y not in seen and on_min_path(y, x):
                    seen.add(y)
                    stack.append(y)
        return False

    seq = [s]
    cur = s
    visited = {s}
    while cur != d:
        nxt = None
        for v in sorted(graph.out_neighbors(cur)):
            if v in visited or not on_min_path(v, cur):
                continue
            if can_finish(v, visited):
                nxt = v
                break
        if nxt is None:  # cannot happen when dist[s] is finite
            raise GraphError("min-leakage reconstruction failed")
        seq.append(nxt)
        visited.add(nxt)
        cur = nxt
    return Path(tuple(seq))


def is_connected(graph: DirectedGraph) -> bool:
    """True when the destination is reachable from the source."""
    return _bfs_dist_to_destination(graph)[graph.source] >= 0
