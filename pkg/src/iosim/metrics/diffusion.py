"""Hashtag diffusion (H4) and cross-group engagement / cascade (H5) analytics."""

from __future__ import annotations

import logging
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

from ..domain import ActionKind
from .graph import MetricError
from .index import LogIndex, as_index

logger = logging.getLogger(__name__)

ADOPTING_KINDS = (ActionKind.POST, ActionKind.RESHARE)
INTERACTING_KINDS = (ActionKind.RESHARE, ActionKind.COMMENT, ActionKind.FOLLOW)


def hashtag_prevalence(log, hashtag: str) -> dict[str, Optional[float]]:
    """Fraction of originals / re-shares / comments carrying ``hashtag`` (None when a type has no posts)."""
    idx = as_index(log)
    tag = hashtag.lower()
    out = {}
    for name, kind in (("original", ActionKind.POST), ("reshare", ActionKind.RESHARE), ("comment", ActionKind.COMMENT)):
        posts = [p for p in idx.posts.values() if p.kind is kind]
        out[name] = sum(tag in p.hashtags for p in posts) / len(posts) if posts else None
    return out


def adoption_events(log, hashtag: str) -> dict[int, tuple[int, int]]:
    """agent -> (iteration, log position) of its first tagged original post or re-share."""
    idx = as_index(log)
    tag = hashtag.lower()
    first: dict[int, tuple[int, int]] = {}
    for ev in idx.events:
        if ev.kind in ADOPTING_KINDS and tag in ev.hashtags and ev.actor not in first:
            first[ev.actor] = (ev.iteration, idx.position(ev))
    return first


def adoption_curve(log, hashtag: str, group: Iterable[int], iterations: Optional[int] = None) -> list[int]:
    """Cumulative number of distinct group members that adopted by the end of each iteration."""
    idx = as_index(log)
    members = set(group)
    if iterations is None:
        iterations = idx.last_iteration + 1
    steps = [0] * iterations
    for agent, (t, _) in adoption_events(idx, hashtag).items():
        if agent in members and t < iterations:
            steps[t] += 1
    curve, running = [], 0
    for s in steps:
        running += s
        curve.append(running)
    return curve


@dataclass(frozen=True)
class AdoptionRecord:
    agent: int
    t_first_interaction: Optional[int]
    t_first_adoption: Optional[int]
    exposures_before_adoption: int

    @property
    def lag(self) -> Optional[int]:
        if self.t_first_interaction is None or self.t_first_adoption is None:
            return None
        return self.t_first_adoption - self.t_first_interaction

    def to_dict(self) -> dict:
        return {
            "agent": self.agent,
            "t_first_interaction": self.t_first_interaction,
            "t_first_adoption": self.t_first_adoption,
            "lag": self.lag,
            "exposures_before_adoption": self.exposures_before_adoption,
        }


def adoption_records(
    log,
    hashtag: str,
    organic: Iterable[int],
    io: Iterable[int],
    *,
    strict_exposure: bool = False,
    include_likes: bool = False,
) -> list[AdoptionRecord]:
    """Per organic agent: first IO interaction, first adoption, and exposures before adoption.

    An exposure is a distinct IO-authored post carrying the hashtag that was
    delivered in the agent's feed, or that the agent re-shared or commented on,
    strictly earlier in the log than the adoption. For agents that never adopt
    the count covers the whole run. ``strict_exposure`` keeps only in-network
    feed deliveries (posts from followed accounts).
    """
    idx = as_index(log)
    tag = hashtag.lower()
    io_set = set(io)
    organic = sorted(set(organic))
    adopted = adoption_events(idx, tag)
    interact_kinds = INTERACTING_KINDS + ((ActionKind.LIKE,) if include_likes else ())
    touch_kinds = (ActionKind.RESHARE, ActionKind.COMMENT) + ((ActionKind.LIKE,) if include_likes else ())

    def tagged_io_post(pid) -> bool:
        info = idx.posts.get(pid)
        return info is not None and info.author in io_set and tag in info.hashtags

    first_interaction: dict[int, int] = {}
    exposed: dict[int, set[int]] = {a: set() for a in organic}
    limit = {a: adopted[a][1] if a in adopted else len(idx.records) for a in organic}

    for pos, feed in idx.feeds:
        agent = feed.actor
        if agent not in exposed or pos >= limit[agent]:
            continue
        ids = feed.payload.get("post_ids", [])
        if strict_exposure:
            ids = ids[: feed.payload.get("n_in_network", 0)]
        exposed[agent].update(pid for pid in ids if tagged_io_post(pid))

    for ev in idx.events:
        agent = ev.actor
        if agent not in exposed:
            continue
        if ev.kind in interact_kinds and agent not in first_interaction and idx.target_author(ev) in io_set:
            first_interaction[agent] = ev.iteration
        if ev.kind in touch_kinds and idx.position(ev) < limit[agent] and tagged_io_post(ev.target_post):
            exposed[agent].add(ev.target_post)

    return [
        AdoptionRecord(
            a,
            first_interaction.get(a),
            adopted[a][0] if a in adopted else None,
            len(exposed[a]),
        )
        for a in organic
    ]


def engagement_counts(log, io: Iterable[int], organic: Iterable[int]) -> dict[str, float]:
    """Mean organic re-shares and comments received per IO original post."""
    idx = as_index(log)
    io_set, org = set(io), set(organic)
    io_posts = {p.post_id for p in idx.posts.values() if p.kind is ActionKind.POST and p.author in io_set}
    if not io_posts:
        raise MetricError("no IO original posts")
    reshares = comments = 0
    for ev in idx.events:
        if ev.actor in org and ev.target_post in io_posts:
            if ev.kind is ActionKind.RESHARE:
                reshares += 1
            elif ev.kind is ActionKind.COMMENT:
                comments += 1
    n = len(io_posts)
    return {"reshares_per_io_post": reshares / n, "comments_per_io_post": comments / n, "io_posts": n}


def gini(counts) -> float:
    """Gini coefficient sum_ij |x_i - x_j| / (2 n^2 mean), via the sorted-rank identity."""
    xs = sorted(float(x) for x in counts)
    n = len(xs)
    if n == 0:
        raise MetricError("gini of an empty list")
    if xs[0] < 0:
        raise MetricError("gini needs non-negative counts")
    total = sum(xs)
    if total == 0:
        raise MetricError("gini of all-zero counts")
    weighted = sum((2 * (i + 1) - n - 1) * x for i, x in enumerate(xs))
    return weighted / (n * total)


def diversity_score(counts) -> float:
    return 1.0 - gini(counts)


def audience_counts(log, io_agent: int, organic: Iterable[int]) -> dict[int, int]:
    idx = as_index(log)
    org = set(organic)
    counts: Counter = Counter()
    for ev in idx.events:
        if ev.kind in (ActionKind.RESHARE, ActionKind.COMMENT) and ev.actor in org:
            info = idx.posts.get(ev.target_post)
            if info is not None and info.author == io_agent:
                counts[ev.actor] += 1
    return dict(counts)


def audience_diversity(log, io_agent: int, organic: Iterable[int]) -> float:
    """1 - Gini over per-organic-agent interaction counts on ``io_agent``'s posts.

    A single interactor gives 1.0 (a one-element list has no inequality);
    callers that care should check ``audience_counts`` for that case.
    """
    counts = audience_counts(log, io_agent, organic)
    if not counts:
        raise MetricError(f"agent {io_agent} received no organic interactions")
    return diversity_score(list(counts.values()))


@dataclass
class Cascade:
    root: int
    depth_of: dict = field(default_factory=dict)  # post_id -> depth
    parent_of: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.depth_of)


@dataclass(frozen=True)
class CascadeStats:
    size: int
    depth: int
    breadth: int

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.size, self.depth, self.breadth)


def _children(idx: LogIndex) -> dict[int, list[int]]:
    kids: dict[int, list[int]] = {}
    for p in idx.posts.values():
        if p.parent is not None:
            kids.setdefault(p.parent, []).append(p.post_id)
    for v in kids.values():
        v.sort()
    return kids


def cascade_from_root(idx: LogIndex, root: int, kids: Optional[dict] = None) -> Cascade:
    kids = _children(idx) if kids is None else kids
    c = Cascade(root, {root: 0}, {})
    queue = deque([root])
    while queue:
        node = queue.popleft()
        for child in kids.get(node, ()):
            if child in c.depth_of:
                continue
            c.depth_of[child] = c.depth_of[node] + 1
            c.parent_of[child] = node
            queue.append(child)
    return c


def build_cascades(log, io: Iterable[int]) -> list[Cascade]:
    """One cascade per IO-authored original post, following re-share and comment parent links."""
    return cascade_partition(log, io)[0]


def cascade_partition(log, io: Iterable[int]) -> tuple[list[Cascade], int, int]:
    """(IO cascades, posts in non-IO-rooted trees, orphaned posts).

    Posts whose ancestry reaches a parent missing from the log are orphans and
    belong to no cascade.
    """
    idx = as_index(log)
    io_set = set(io)
    kids = _children(idx)
    cascades, non_io = [], 0
    for p in sorted(idx.posts.values(), key=lambda p: p.post_id):
        if p.kind is not ActionKind.POST:
            continue
        c = cascade_from_root(idx, p.post_id, kids)
        if p.author in io_set:
            cascades.append(c)
        else:
            non_io += c.size
    covered = sum(c.size for c in cascades) + non_io
    orphans = len(idx.posts) - covered
    if orphans:
        logger.warning("%d posts reference missing parents and were excluded from cascades", orphans)
    return cascades, non_io, orphans


def cascade_stats(c: Cascade) -> CascadeStats:
    widths = Counter(c.depth_of.values())
    return CascadeStats(size=c.size, depth=max(widths), breadth=max(widths.values()))
