"""
Graph representation, ground-truth oracles and the natural-language graph template.

Text template (LF newlines, no trailing newline)::

    The graph has {n} nodes, numbered from 0 to {n-1}.
    Node {i} is connected to: node {j}, node {k}.
    Node {i} is connected to: node {j} (weight {w}).
    Node {i} is connected to: none.

Every undirected edge is listed once, under its smaller endpoint, neighbors ascending.
"""

import heapq
import random
import re
from typing import Optional

import networkx as nx
from pydantic import BaseModel, Field, PrivateAttr, model_validator

from .errors import InputError

NodeId = int
Edge = tuple[int, int]


class Graph(BaseModel):
    """
    Undirected graph over nodes ``0..n-1`` with optional positive integer edge weights.

    Edges are canonical after validation: ``u < v``, sorted lexicographically, and
    ``weights`` (when present) is parallel to ``edges``. The JSON form is
    ``{"n": int, "edges": [[u, v], ...], "weights": [w, ...] | null}``.
    """

    n: int = Field(gt=0)
    edges: list[Edge] = Field(default_factory=list)
    weights: Optional[list[int]] = None

    _adjacency: Optional[dict[int, dict[int, Optional[int]]]] = PrivateAttr(default=None)
    _nx_graph: Optional[nx.Graph] = PrivateAttr(default=None)

    @model_validator(mode="after")
    def _canonicalize(self) -> "Graph":
        if self.weights is not None and len(self.weights) != len(self.edges):
            raise ValueError(f"{len(self.weights)} weights given for {len(self.edges)} edges")

        raw_weights = self.weights if self.weights is not None else [None] * len(self.edges)
        pairs = [((min(u, v), max(u, v)), w) for (u, v), w in zip(self.edges, raw_weights)]
        pairs.sort(key=lambda pair: pair[0])

        for (u, v), w in pairs:
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            if u < 0 or v >= self.n:
                raise ValueError(f"edge ({u}, {v}) has an endpoint outside 0..{self.n - 1}")
            if w is not None and w < 1:
                raise ValueError(f"edge ({u}, {v}) has non-positive weight {w}")
        for (prev_edge, _), (edge, _) in zip(pairs, pairs[1:]):
            if prev_edge == edge:
                raise ValueError(f"duplicate edge {edge}")

        self.edges = [edge for edge, _ in pairs]
        if self.weights is not None:
            self.weights = [w for _, w in pairs]
        return self

    def __eq__(self, other: object) -> bool:
        # Cached adjacency lives in private state and must not affect equality.
        if not isinstance(other, Graph):
            return NotImplemented
        return (self.n, self.edges, self.weights) == (other.n, other.edges, other.weights)

    __hash__ = None  # type: ignore[assignment]

    @property
    def weighted(self) -> bool:
        return self.weights is not None

    def key(self) -> tuple:
        """Hashable identity of the graph, used for split-disjointness checks."""
        return (self.n, tuple(self.edges), tuple(self.weights) if self.weights is not None else None)

    def _adj(self) -> dict[int, dict[int, Optional[int]]]:
        if self._adjacency is None:
            adjacency: dict[int, dict[int, Optional[int]]] = {v: {} for v in range(self.n)}
            weights = self.weights if self.weights is not None else [None] * len(self.edges)
            for (u, v), w in zip(self.edges, weights):
                adjacency[u][v] = w
                adjacency[v][u] = w
            self._adjacency = adjacency
        return self._adjacency

    def has_node(self, v: int) -> bool:
        return isinstance(v, int) and 0 <= v < self.n

    def has_edge(self, u: int, v: int) -> bool:
        return self.has_node(u) and self.has_node(v) and v in self._adj()[u]

    def weight(self, u: int, v: int) -> Optional[int]:
        """Weight of edge {u, v}; None when the edge is absent or the graph is unweighted."""
        if not self.has_edge(u, v):
            return None
        return self._adj()[u][v]

    def neighbors(self, u: int) -> list[int]:
        return sorted(self._adj()[u])

    def with_unit_weights(self) -> "Graph":
        return Graph(n=self.n, edges=list(self.edges), weights=[1] * len(self.edges))

    def to_networkx(self) -> nx.Graph:
        """Reconstruct the graph in networkx (nodes inserted ascending, edges sorted)."""
        if self._nx_graph is None:
            graph = nx.Graph()
            graph.add_nodes_from(range(self.n))
            if self.weights is None:
                graph.add_edges_from(self.edges)
            else:
                graph.add_weighted_edges_from((u, v, w) for (u, v), w in zip(self.edges, self.weights))
            self._nx_graph = graph
        return self._nx_graph


class PathWitness(BaseModel):
    """A validated path and its total weight (hop count for unweighted graphs)."""

    nodes: list[int] = Field(min_length=1)
    total_weight: int = Field(ge=0)


class GenGraphConfig(BaseModel):
    """Parameters of the G(n, p) sampler. Defaults are engineering choices."""

    node_range: tuple[int, int] = (5, 15)
    edge_probability: float = Field(default=0.3, gt=0.0, lt=1.0)
    weighted: bool = False
    weight_range: tuple[int, int] = (1, 10)

    @model_validator(mode="after")
    def _check_ranges(self) -> "GenGraphConfig":
        low, high = self.node_range
        if low < 2 or low > high:
            raise ValueError(f"node_range must satisfy 2 <= low <= high, got {self.node_range}")
        low, high = self.weight_range
        if low < 1 or low > high:
            raise ValueError(f"weight_range must satisfy 1 <= low <= high, got {self.weight_range}")
        return self


def _require_node(g: Graph, v: int, name: str) -> None:
    if not g.has_node(v):
        raise InputError(f"{name}={v!r} is not a node of a graph with {g.n} nodes")


# ---------------------
# Oracles
# ---------------------

def is_connected(g: Graph, a: int, b: int) -> bool:
    _require_node(g, a, "a")
    _require_node(g, b, "b")
    if a == b:
        return True
    return nx.has_path(g.to_networkx(), a, b)


def shortest_path_length(g: Graph, s: int, t: int) -> Optional[tuple[int, PathWitness]]:
    """
    Dijkstra from ``s``. Among equally short routes the predecessor with the lowest
    node id wins, so the witness path is reproducible. Returns None when ``t`` is
    unreachable.
    """
    if not g.weighted:
        raise InputError("shortest_path_length requires a weighted graph")
    _require_node(g, s, "s")
    _require_node(g, t, "t")

    dist = {s: 0}
    pred: dict[int, int] = {}
    done: set[int] = set()
    heap = [(0, s)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == t:
            break
        for v in g.neighbors(u):
            nd = d + g.weight(u, v)
            old = dist.get(v)
            if old is None or nd < old:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
            elif nd == old and v not in done and u < pred[v]:
                pred[v] = u

    if t not in dist:
        return None
    path = [t]
    while path[-1] != s:
        path.append(pred[path[-1]])
    path.reverse()
    return dist[t], PathWitness(nodes=path, total_weight=dist[t])


def validate_path(g: Graph, nodes: list[int]) -> tuple[bool, Optional[int]]:
    if not nodes:
        raise InputError("validate_path needs at least one node")
    if not all(g.has_node(v) for v in nodes):
        return False, None
    total = 0
    for u, v in zip(nodes, nodes[1:]):
        if not g.has_edge(u, v):
            return False, None
        total += g.weight(u, v) if g.weighted else 1
    return True, total


def bfs_path(g: Graph, s: int, t: int) -> Optional[list[int]]:
    """Fewest-hop path from s to t, or None when disconnected."""
    _require_node(g, s, "s")
    _require_node(g, t, "t")
    try:
        return nx.shortest_path(g.to_networkx(), s, t)
    except nx.NetworkXNoPath:
        return None


def bfs_discovery_edges(g: Graph, s: int) -> list[Edge]:
    """Tree edges (parent, child) of a breadth-first search from s, in discovery order."""
    _require_node(g, s, "s")
    return list(nx.bfs_edges(g.to_networkx(), s, sort_neighbors=sorted))


# ---------------------
# Text template
# ---------------------

_HEADER_RE = re.compile(r"^The graph has ([0-9]+) nodes, numbered from 0 to ([0-9]+)\.$")
_NODE_RE = re.compile(r"^Node ([0-9]+) is connected to: (.*)\.$")
_ITEM_RE = re.compile(r"^node ([0-9]+)(?: \(weight ([0-9]+)\))?$")


def render_graph_text(g: Graph) -> str:
    lines = [f"The graph has {g.n} nodes, numbered from 0 to {g.n - 1}."]
    for i in range(g.n):
        later = [j for j in g.neighbors(i) if j > i]
        if not later:
            listing = "none"
        elif g.weighted:
            listing = ", ".join(f"node {j} (weight {g.weight(i, j)})" for j in later)
        else:
            listing = ", ".join(f"node {j}" for j in later)
        lines.append(f"Node {i} is connected to: {listing}.")
    return "\n".join(lines)


def parse_graph_text(text: str) -> Graph:
    """Inverse of :func:`render_graph_text`."""
    lines = text.split("\n")
    header = _HEADER_RE.match(lines[0])
    if header is None:
        raise InputError(f"unrecognised graph header: {lines[0]!r}")
    n = int(header.group(1))
    if int(header.group(2)) != n - 1 or len(lines) != n + 1:
        raise InputError(f"graph text declares {n} nodes but has {len(lines) - 1} node lines")

    edges: list[Edge] = []
    weights: list[Optional[int]] = []
    for i, line in enumerate(lines[1:]):
        match = _NODE_RE.match(line)
        if match is None or int(match.group(1)) != i:
            raise InputError(f"line {i + 2}: expected the entry for node {i}, got {line!r}")
        listing = match.group(2)
        if listing == "none":
            continue
        for item in listing.split(", "):
            item_match = _ITEM_RE.match(item)
            if item_match is None:
                raise InputError(f"line {i + 2}: malformed neighbor entry {item!r}")
            edges.append((i, int(item_match.group(1))))
            weights.append(int(item_match.group(2)) if item_match.group(2) is not None else None)

    weighted = {w is not None for w in weights}
    if len(weighted) > 1:
        raise InputError("graph text mixes weighted and unweighted neighbor entries")
    return Graph(n=n, edges=edges, weights=weights if weighted == {True} else None)


# ---------------------
# Generation
# ---------------------

def gen_graph(cfg: GenGraphConfig, seed: int) -> Graph:
    """Erdős–Rényi sample; identical (cfg, seed) gives an identical graph."""
    rng = random.Random(seed)
    n = rng.randint(*cfg.node_range)
    sampled = nx.gnp_random_graph(n, cfg.edge_probability, seed=rng)
    edges = sorted((min(u, v), max(u, v)) for u, v in sampled.edges())
    weights = [rng.randint(*cfg.weight_range) for _ in edges] if cfg.weighted else None
    return Graph(n=n, edges=edges, weights=weights)
