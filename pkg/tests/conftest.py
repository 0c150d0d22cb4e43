"""Pytest configuration, shared fixtures and independent oracles for grk tests."""

import networkx as nx
import pytest

from grk.graph import GenGraphConfig, Graph
from grk.parser import TaskKind
from grk.taskgen import DatasetSpec, TaskInstance, build_dataset, derive_seed, gen_instance, graph_config_for


# ---------------------
# Independent oracles
# ---------------------

class UnionFind:
    """Disjoint sets with path halving; used to cross-check reachability."""

    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        self.parent[self.find(a)] = self.find(b)


def union_find_connected(g: Graph, a: int, b: int) -> bool:
    sets = UnionFind(g.n)
    for u, v in g.edges:
        sets.union(u, v)
    return sets.find(a) == sets.find(b)


def enumerate_shortest_length(g: Graph, s: int, t: int):
    """Minimum weight over every simple s-t path, or None when there is none."""
    if s == t:
        return 0
    graph = g.to_networkx()
    best = None
    for path in nx.all_simple_paths(graph, s, t):
        weight = sum(g.weight(u, v) for u, v in zip(path, path[1:]))
        best = weight if best is None else min(best, weight)
    return best


def sample_instances(kind: TaskKind, count: int, seed: int = 0, cfg: GenGraphConfig = None):
    cfg = graph_config_for(kind, cfg or GenGraphConfig())
    return [
        gen_instance(kind, cfg, seed=derive_seed(seed, index), instance_id=f"{kind.value}-sample-{index}")
        for index in range(count)
    ]


# ---------------------
# Graph fixtures
# ---------------------

@pytest.fixture
def path_graph():
    """Unweighted path 0-1-2."""
    return Graph(n=3, edges=[(0, 1), (1, 2)])


@pytest.fixture
def triangle():
    """Weighted triangle 0-1 (1), 1-2 (2), 0-2 (5)."""
    return Graph(n=3, edges=[(0, 1), (1, 2), (0, 2)], weights=[1, 2, 5])


# ---------------------
# Instance fixtures
# ---------------------

@pytest.fixture
def conn_yes(path_graph):
    return TaskInstance(
        id="connectivity-yes", kind=TaskKind.CONNECTIVITY, graph=path_graph, source=0, target=2, ground_truth=True
    )


@pytest.fixture
def conn_no():
    """Source 0 reaches only node 1; target 3 sits in the other component."""
    return TaskInstance(
        id="connectivity-no",
        kind=TaskKind.CONNECTIVITY,
        graph=Graph(n=4, edges=[(0, 1), (2, 3)]),
        source=0,
        target=3,
        ground_truth=False,
    )


@pytest.fixture
def conn_isolated():
    """Isolated source: the gold trace is empty."""
    return TaskInstance(
        id="connectivity-isolated",
        kind=TaskKind.CONNECTIVITY,
        graph=Graph(n=3, edges=[(1, 2)]),
        source=0,
        target=2,
        ground_truth=False,
    )


@pytest.fixture
def sp_triangle(triangle):
    return TaskInstance(
        id="shortest_path-triangle", kind=TaskKind.SHORTEST_PATH, graph=triangle, source=0, target=2, ground_truth=3
    )


@pytest.fixture
def all_fixture_instances(conn_yes, conn_no, conn_isolated, sp_triangle):
    return [conn_yes, conn_no, conn_isolated, sp_triangle]


@pytest.fixture(scope="session")
def generated_instances():
    """A few hundred random instances of both kinds."""
    return sample_instances(TaskKind.CONNECTIVITY, 150, seed=11) + sample_instances(
        TaskKind.SHORTEST_PATH, 150, seed=12
    )


@pytest.fixture(scope="session")
def full_size_instances():
    """A thousand random instances of each kind."""
    return sample_instances(TaskKind.CONNECTIVITY, 1000, seed=21) + sample_instances(
        TaskKind.SHORTEST_PATH, 1000, seed=22
    )


@pytest.fixture
def small_spec():
    return DatasetSpec(
        train_counts={TaskKind.CONNECTIVITY: 6, TaskKind.SHORTEST_PATH: 4},
        test_counts={TaskKind.CONNECTIVITY: 4, TaskKind.SHORTEST_PATH: 4},
        seed=7,
    )


@pytest.fixture
def small_dataset(small_spec):
    return build_dataset(small_spec)
