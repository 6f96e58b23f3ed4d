import itertools
import math
import random

import pytest

from iosim.domain import ActionKind
from iosim.metrics.graph import (
    InteractionGraph,
    MetricError,
    avg_clustering,
    build_interaction_graph,
    density,
    intra_group_share,
    reciprocity,
)

from oracles import clustering as clustering_oracle
from oracles import density as density_oracle
from oracles import reciprocity as reciprocity_oracle

A, B, C, D = 0, 1, 2, 3


def g(nodes, edges):
    return InteractionGraph.from_edges(nodes, edges)


def test_density_fixtures():
    assert density(g([A, B, C], [(a, b) for a in range(3) for b in range(3) if a != b])) == 1.0
    assert density(g([A, B, C], [(A, B), (B, A), (A, C)])) == 0.5


def test_density_needs_two_nodes():
    with pytest.raises(MetricError):
        density(g([A], []))


def test_clustering_fixtures():
    assert avg_clustering(g([A, B, C], [(A, B), (B, C), (C, A)])) == 1.0
    assert avg_clustering(g([A, B, C], [(A, B), (B, C)])) == 0.0
    k4_minus = [(a, b) for a, b in itertools.combinations(range(4), 2) if (a, b) != (C, D)]
    assert avg_clustering(g(range(4), k4_minus)) == pytest.approx(5 / 6, abs=1e-15)


def test_reciprocity_fixtures():
    assert reciprocity(g([A, B], [(A, B), (B, A)])) == 1.0
    assert reciprocity(g([A, B], [(A, B)])) == 0.0
    assert reciprocity(g([A, B, C], [(A, B), (B, A), (A, C)])) == pytest.approx(2 / 3, abs=1e-15)
    with pytest.raises(MetricError):
        reciprocity(g([A, B], []))


def _all_digraphs(n):
    pairs = [(a, b) for a in range(n) for b in range(n) if a != b]
    for mask in range(1 << len(pairs)):
        yield [p for k, p in enumerate(pairs) if mask >> k & 1]


@pytest.mark.parametrize("n", [2, 3])
def test_metrics_match_bruteforce_exhaustive_small(n):
    nodes = list(range(n))
    for edges in _all_digraphs(n):
        graph = g(nodes, edges)
        assert abs(density(graph) - density_oracle(nodes, set(edges))) <= 1e-12
        assert abs(avg_clustering(graph) - clustering_oracle(nodes, set(edges))) <= 1e-12
        if edges:
            assert abs(reciprocity(graph) - reciprocity_oracle(edges)) <= 1e-12


def test_metrics_match_bruteforce_random_n5_n6():
    rng = random.Random(5)
    for _ in range(200):
        n = rng.choice([5, 6])
        nodes = list(range(n))
        p = rng.random()
        edges = [(a, b) for a in nodes for b in nodes if a != b and rng.random() < p]
        graph = g(nodes, edges)
        assert abs(density(graph) - density_oracle(nodes, set(edges))) <= 1e-12
        assert abs(avg_clustering(graph) - clustering_oracle(nodes, set(edges))) <= 1e-12
        if edges:
            assert abs(reciprocity(graph) - reciprocity_oracle(edges)) <= 1e-12


def test_build_graph_counts_and_self_loops(builder):
    p = builder.post(0, B)
    builder.reshare(1, A, p)
    builder.reshare(2, A, p)
    own = builder.post(0, C)
    builder.comment(1, C, own)
    graph = build_interaction_graph(builder.sorted(), {ActionKind.RESHARE, ActionKind.COMMENT})
    assert graph.edges == {(A, B): 2}


def test_build_graph_empty_log():
    graph = build_interaction_graph([], {ActionKind.RESHARE})
    assert not graph.nodes and not graph.edges


def test_build_graph_member_filter(builder):
    p = builder.post(0, B)
    q = builder.post(0, D)
    builder.reshare(1, A, p)
    builder.reshare(1, A, q)
    builder.follow(1, C, A)
    graph = build_interaction_graph(builder.sorted(), {ActionKind.RESHARE, ActionKind.FOLLOW}, members=[A, B, C])
    assert graph.nodes == {A, B, C}
    assert graph.edges == {(A, B): 1, (C, A): 1}


def test_intra_group_share_counts(builder):
    io = list(range(5))
    io_posts = [builder.post(0, a) for a in io]
    other = [builder.post(0, 10 + k) for k in range(2)]
    for k in range(8):
        builder.reshare(1, k % 5, io_posts[(k + 1) % 5])
    builder.reshare(1, 0, other[0])
    builder.reshare(1, 1, other[1])
    assert intra_group_share(builder.sorted(), ActionKind.RESHARE, io) == pytest.approx(0.8)


def test_intra_group_share_all_inside(builder):
    posts = [builder.post(0, a) for a in range(2)]
    for k in range(10):
        builder.reshare(1, k % 2, posts[(k + 1) % 2])
    assert intra_group_share(builder.sorted(), ActionKind.RESHARE, [0, 1]) == 1.0


def test_intra_group_share_ignores_self_targets(builder):
    p = builder.post(0, 0)
    q = builder.post(0, 5)
    builder.reshare(1, 0, p)
    builder.reshare(1, 0, q)
    assert intra_group_share(builder.sorted(), ActionKind.RESHARE, [0, 1]) == 0.0


def test_intra_group_share_without_events_is_absent():
    with pytest.raises(MetricError):
        intra_group_share([], ActionKind.RESHARE, [0, 1])
