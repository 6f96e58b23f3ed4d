"""H1 cohesion metrics over directed interaction graphs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from ..domain import ActionKind
from .index import as_index


class MetricError(ValueError):
    """A metric's precondition does not hold for the given input."""


INTERACTION_KINDS = frozenset({ActionKind.RESHARE, ActionKind.COMMENT, ActionKind.FOLLOW, ActionKind.LIKE})


@dataclass(frozen=True)
class InteractionGraph:
    nodes: frozenset[int]
    edges: dict  # (source, target) -> interaction count
    kinds: frozenset[ActionKind] = frozenset()

    @classmethod
    def from_edges(cls, nodes: Iterable[int], edges: Iterable[tuple[int, int]], kinds=frozenset()) -> "InteractionGraph":
        weights: dict[tuple[int, int], int] = {}
        for s, t in edges:
            if s != t:
                weights[(s, t)] = weights.get((s, t), 0) + 1
        node_set = frozenset(nodes) | {n for e in weights for n in e}
        return cls(node_set, weights, frozenset(kinds))

    def neighbors_undirected(self) -> dict[int, set[int]]:
        nbrs: dict[int, set[int]] = {n: set() for n in self.nodes}
        for s, t in self.edges:
            nbrs[s].add(t)
            nbrs[t].add(s)
        return nbrs


def build_interaction_graph(log, kinds, members: Optional[Iterable[int]] = None) -> InteractionGraph:
    """Edge a->b weighted by how often a re-shared/commented/liked b's posts or followed b.

    With ``members`` the graph is restricted to (and its node set equals) that group.
    """
    kinds = frozenset(ActionKind(k) for k in kinds)
    if not kinds <= INTERACTION_KINDS:
        raise ValueError(f"kinds must be a subset of {sorted(k.value for k in INTERACTION_KINDS)}")
    idx = as_index(log)
    member_set = frozenset(members) if members is not None else None
    pairs = []
    for ev in idx.events:
        if ev.kind not in kinds:
            continue
        target = idx.target_author(ev)
        if target is None or target == ev.actor:
            continue
        if member_set is not None and (ev.actor not in member_set or target not in member_set):
            continue
        pairs.append((ev.actor, target))
    return InteractionGraph.from_edges(member_set or (), pairs, kinds)


def density(g: InteractionGraph) -> float:
    n = len(g.nodes)
    if n < 2:
        raise MetricError("density needs at least 2 nodes")
    return len(g.edges) / (n * (n - 1))


def avg_clustering(g: InteractionGraph) -> float:
    """Mean local clustering of the undirected projection; degree < 2 counts as 0."""
    if not g.nodes:
        raise MetricError("clustering needs at least 1 node")
    nbrs = g.neighbors_undirected()
    total = 0.0
    for node, adj in nbrs.items():
        k = len(adj)
        if k < 2:
            continue
        adj_list = sorted(adj)
        links = sum(1 for i, u in enumerate(adj_list) for v in adj_list[i + 1:] if v in nbrs[u])
        total += 2.0 * links / (k * (k - 1))
    return total / len(nbrs)


def reciprocity(g: InteractionGraph) -> float:
    if not g.edges:
        raise MetricError("reciprocity needs at least one edge")
    mutual = sum(1 for (s, t) in g.edges if (t, s) in g.edges)
    return mutual / len(g.edges)


def intra_group_share(log, kind, group: Iterable[int]) -> float:
    """Share of the group's ``kind`` interactions whose target is also in the group.

    Self-directed interactions are ignored on both sides of the ratio.
    """
    kind = ActionKind(kind)
    idx = as_index(log)
    members = set(group)
    total = inside = 0
    for ev in idx.events:
        if ev.kind is not kind or ev.actor not in members:
            continue
        target = idx.target_author(ev)
        if target is None or target == ev.actor:
            continue
        total += 1
        inside += target in members
    if total == 0:
        raise MetricError(f"no {kind.value} events by group members")
    return inside / total
