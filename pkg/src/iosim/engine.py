"""The iterative simulation loop.

Each iteration: regime hooks run first (the IO discussion), then every agent,
in ascending id order, gets a feed built from the pre-turn snapshot, a gated
set of permitted action kinds, and a backend decision. Decisions may be
requested concurrently but are applied strictly in ascending id order.
"""

from __future__ import annotations

import logging
import random
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from .backends.base import AgentContext, AgentDecision, BackendError, BackendUnavailable, FeedItem
from .domain import (
    GATED_KINDS,
    ActionEvent,
    ActionKind,
    AgentGroup,
    LogRecord,
    MetaEvent,
    Persona,
    RunManifest,
    SimulationConfig,
    extract_hashtags,
    validate_config,
)
from .personas import arrange_personas, generate_personas
from .regimes import NoHook, hooks_for, render_system_prompt
from .rng import substream
from .store import EventLogFile, write_json

log = logging.getLogger(__name__)


@dataclass
class Post:
    post_id: int
    author: int
    iteration: int
    text: str
    hashtags: tuple[str, ...]
    kind: ActionKind  # POST (original), RESHARE or COMMENT
    parent: Optional[int] = None
    reshares: int = 0
    comments: int = 0
    likes: int = 0


@dataclass
class AgentMemory:
    owner: int
    capacity: int = 50
    events: deque = field(default_factory=deque)
    posts_made: int = 0
    reshares_received: int = 0
    comments_received: int = 0
    likes_received: int = 0
    follows_received: int = 0
    tag_exposures: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.events = deque(self.events, maxlen=self.capacity)

    def counters(self) -> dict:
        return {
            "posts_made": self.posts_made,
            "reshares_received": self.reshares_received,
            "comments_received": self.comments_received,
            "likes_received": self.likes_received,
            "follows_received": self.follows_received,
        }


def update_memory(memory: AgentMemory, events: list[ActionEvent]) -> AgentMemory:
    for ev in events:
        memory.events.append(ev)
        if ev.actor == memory.owner:
            if ev.kind is ActionKind.POST:
                memory.posts_made += 1
            continue
        if ev.target_agent != memory.owner:
            continue
        if ev.kind is ActionKind.RESHARE:
            memory.reshares_received += 1
        elif ev.kind is ActionKind.COMMENT:
            memory.comments_received += 1
        elif ev.kind is ActionKind.LIKE:
            memory.likes_received += 1
        elif ev.kind is ActionKind.FOLLOW:
            memory.follows_received += 1
    return memory


@dataclass
class AgentState:
    agent_id: int
    persona: Persona
    group: AgentGroup
    memory: AgentMemory
    following: set = field(default_factory=set)


@dataclass(frozen=True)
class FeedEntry:
    post_id: int
    in_network: bool


@dataclass(frozen=True)
class Feed:
    owner: int
    entries: tuple[FeedEntry, ...]

    @property
    def post_ids(self) -> list[int]:
        return [e.post_id for e in self.entries]

    @property
    def n_in_network(self) -> int:
        return sum(e.in_network for e in self.entries)


class SimState:
    def __init__(self, config: SimulationConfig, personas: list[Persona], templates=None):
        self.config = config
        self.templates = templates
        self.iteration = 0
        self.agents = [
            AgentState(i, p, config.group_of(i), AgentMemory(i, config.memory_size)) for i, p in enumerate(personas)
        ]
        self.posts: dict[int, Post] = {}
        self.post_order: list[int] = []
        self.posts_by_author: dict[int, list[int]] = {i: [] for i in range(config.n_agents)}
        self.next_post_id = 0
        self.strategy = None
        self.log: list[LogRecord] = []
        self._feed_items: dict[tuple[int, bool], FeedItem] = {}

    @property
    def names(self) -> dict[int, str]:
        return {a.agent_id: a.persona.name for a in self.agents}

    def roster(self, agent: int) -> Optional[tuple[tuple[int, str], ...]]:
        """Other IO agents, visible only to IO agents in regimes that reveal teammates."""
        if self.agents[agent].group is not AgentGroup.IO or not self.config.regime.roster_visible:
            return None
        return tuple((a.agent_id, a.persona.name) for a in self.agents if a.group is AgentGroup.IO and a.agent_id != agent)

    def system_prompt(self, agent: int) -> str:
        roster = self.roster(agent)
        is_io = self.agents[agent].group is AgentGroup.IO
        return render_system_prompt(
            self.config.regime,
            self.agents[agent].persona,
            self.config.campaign,
            [n for _, n in roster] if roster is not None else None,
            self.strategy if is_io else None,
            self.templates,
        )

    def feed_item(self, post_id: int, in_network: bool) -> FeedItem:
        key = (post_id, in_network)
        item = self._feed_items.get(key)
        if item is None:
            p = self.posts[post_id]
            kind = {ActionKind.POST: "original", ActionKind.RESHARE: "reshare", ActionKind.COMMENT: "comment"}[p.kind]
            item = FeedItem(p.post_id, p.author, self.agents[p.author].persona.name, p.text, p.hashtags, in_network, kind)
            self._feed_items[key] = item
        return item

    def snapshot_digest(self) -> tuple:
        """Hashable summary of the state, used for determinism checks."""
        return (
            self.iteration,
            tuple((a.agent_id, a.persona.name, a.group.value, tuple(sorted(a.following))) for a in self.agents),
            tuple((p.post_id, p.author, p.text, p.reshares, p.comments, p.likes) for p in self.posts.values()),
        )


def init_simulation(config: SimulationConfig, personas: Optional[list[Persona]] = None, templates=None) -> SimState:
    config = validate_config(config, allow_empty_run=True)
    if personas is None:
        personas = generate_personas(config)
    personas = arrange_personas(list(personas), config)
    return SimState(config, personas, templates)


def build_feed(state: SimState, owner: int, rng: Optional[random.Random] = None) -> Feed:
    """Up to R posts: the newest in-network posts first, then a seeded uniform sample of the rest.

    In-network posts are those authored by accounts ``owner`` follows; they fill
    at most ``floor(R * in_network_fraction)`` slots. Unused in-network slots
    spill over to out-of-network sampling. The owner's own posts never appear.
    """
    cfg = state.config
    if rng is None:
        rng = substream(cfg.seed, "feed", owner, state.iteration)
    following = state.agents[owner].following
    quota = cfg.in_network_quota

    in_net: list[tuple[int, int]] = []
    if quota > 0 and following:
        for author in following:
            ids = state.posts_by_author[author]
            if not ids:
                continue
            tail = ids[-quota:]
            # pull in older same-iteration posts so the id tie-break sees them all
            first = len(ids) - len(tail)
            boundary = state.posts[tail[0]].iteration
            while first > 0 and state.posts[ids[first - 1]].iteration == boundary:
                first -= 1
            in_net.extend((-state.posts[pid].iteration, pid) for pid in ids[first:])
        in_net.sort()
        in_net = in_net[:quota]
    entries = [FeedEntry(pid, True) for _, pid in in_net]

    need = cfg.feed_size - len(entries)
    if need > 0 and state.post_order:
        excluded = set(following)
        excluded.add(owner)
        n_total = len(state.post_order)
        n_excluded = sum(len(state.posts_by_author[a]) for a in excluded)
        n_valid = n_total - n_excluded
        if n_valid > 0:
            order = state.post_order
            posts = state.posts
            if n_valid <= need or n_valid * 4 < n_total:
                candidates = [pid for pid in order if posts[pid].author not in excluded]
                picked = rng.sample(candidates, min(need, len(candidates)))
            else:
                picked, seen = [], set()
                while len(picked) < need:
                    i = rng.randrange(n_total)
                    if i in seen:
                        continue
                    seen.add(i)
                    pid = order[i]
                    if posts[pid].author not in excluded:
                        picked.append(pid)
            entries.extend(FeedEntry(pid, False) for pid in picked)
    return Feed(owner, tuple(entries))


def gate_actions(rng: random.Random, threshold: float) -> frozenset[ActionKind]:
    """One uniform draw per gated kind; the kind is enabled iff draw < threshold."""
    enabled = {kind for kind in GATED_KINDS if rng.random() < threshold}
    enabled.add(ActionKind.SILENT)
    return frozenset(enabled)


def _new_post(state: SimState, author: int, text: str, kind: ActionKind, parent: Optional[int]) -> Post:
    post = Post(state.next_post_id, author, state.iteration, text, tuple(extract_hashtags(text)), kind, parent)
    state.next_post_id += 1
    state.posts[post.post_id] = post
    state.post_order.append(post.post_id)
    state.posts_by_author[author].append(post.post_id)
    return post


def apply_decision(
    state: SimState,
    actor: int,
    decision: AgentDecision,
    permitted: Optional[frozenset[ActionKind]] = None,
) -> list[ActionEvent]:
    """Apply ``decision`` for ``actor`` and return the resulting events in canonical order.

    Invalid sub-actions (dangling targets, self-follows, empty texts, kinds
    outside ``permitted``) are dropped with a warning; the rest still apply.
    A silent decision yields a single Silent event.
    """
    if not 0 <= actor < len(state.agents):
        raise KeyError(f"unknown actor {actor}")
    t = state.iteration
    rationale = decision.rationale or None
    events: list[ActionEvent] = []

    if decision.is_silent:
        events.append(ActionEvent(t, actor, ActionKind.SILENT, rationale=rationale))
    for sub in decision.active:
        if permitted is not None and sub.kind not in permitted:
            log.warning("iteration %d agent %d: %s not permitted this turn, dropped", t, actor, sub.kind.value)
            continue
        ev = _apply_one(state, actor, sub, rationale)
        if ev is not None:
            events.append(ev)

    for ev in events:
        update_memory(state.agents[actor].memory, [ev])
        if ev.target_agent is not None and ev.target_agent != actor:
            update_memory(state.agents[ev.target_agent].memory, [ev])
    return events


def _apply_one(state: SimState, actor: int, sub, rationale) -> Optional[ActionEvent]:
    t = state.iteration
    kind = sub.kind
    if kind is ActionKind.POST:
        text = (sub.text or "").strip()
        if not text:
            log.warning("iteration %d agent %d: empty post dropped", t, actor)
            return None
        post = _new_post(state, actor, text, ActionKind.POST, None)
        return ActionEvent(t, actor, kind, post_id=post.post_id, text=text, hashtags=post.hashtags, rationale=rationale)

    if kind is ActionKind.FOLLOW:
        target = sub.target_agent
        if target is None or not 0 <= target < len(state.agents) or target == actor:
            log.warning("iteration %d agent %d: invalid follow target %r dropped", t, actor, target)
            return None
        following = state.agents[actor].following
        if target in following:
            return None
        following.add(target)
        return ActionEvent(t, actor, kind, target_agent=target, rationale=rationale)

    target = state.posts.get(sub.target_post) if sub.target_post is not None else None
    if target is None:
        log.warning("iteration %d agent %d: %s of unknown post %r dropped", t, actor, kind.value, sub.target_post)
        return None
    if kind is ActionKind.LIKE:
        target.likes += 1
        return ActionEvent(t, actor, kind, target_post=target.post_id, target_agent=target.author, rationale=rationale)
    if kind is ActionKind.RESHARE:
        post = _new_post(state, actor, target.text, ActionKind.RESHARE, target.post_id)
        target.reshares += 1
        return ActionEvent(
            t, actor, kind, post_id=post.post_id, target_post=target.post_id, target_agent=target.author,
            text=post.text, hashtags=post.hashtags, rationale=rationale,
        )
    if kind is ActionKind.COMMENT:
        text = (sub.text or "").strip()
        if not text:
            log.warning("iteration %d agent %d: empty comment dropped", t, actor)
            return None
        post = _new_post(state, actor, text, ActionKind.COMMENT, target.post_id)
        target.comments += 1
        return ActionEvent(
            t, actor, kind, post_id=post.post_id, target_post=target.post_id, target_agent=target.author,
            text=text, hashtags=post.hashtags, rationale=rationale,
        )
    raise AssertionError(kind)


def _describe(ev: ActionEvent, owner: int, names: dict[int, str]) -> str:
    who = "you" if ev.actor == owner else names.get(ev.actor, f"agent {ev.actor}")
    tgt = "you" if ev.target_agent == owner else names.get(ev.target_agent, f"agent {ev.target_agent}")
    k = ev.kind
    if k is ActionKind.POST:
        return f"step {ev.iteration}: {who} posted [post {ev.post_id}]: {ev.text}"
    if k is ActionKind.RESHARE:
        return f"step {ev.iteration}: {who} re-shared post {ev.target_post} by {tgt}"
    if k is ActionKind.COMMENT:
        return f"step {ev.iteration}: {who} commented on post {ev.target_post} by {tgt}: {ev.text}"
    if k is ActionKind.LIKE:
        return f"step {ev.iteration}: {who} liked post {ev.target_post} by {tgt}"
    if k is ActionKind.FOLLOW:
        return f"step {ev.iteration}: {who} followed {tgt}"
    return f"step {ev.iteration}: {who} stayed silent"


def build_context(state: SimState, agent: int, feed: Feed, permitted: frozenset[ActionKind]) -> AgentContext:
    cfg = state.config
    a = state.agents[agent]
    names = state.names
    is_io = a.group is AgentGroup.IO
    digest = tuple(_describe(ev, agent, names) for ev in list(a.memory.events)[-cfg.context_window:])
    return AgentContext(
        agent=agent,
        name=a.persona.name,
        group=a.group,
        iteration=state.iteration,
        system_prompt=state.system_prompt(agent),
        feed=tuple(state.feed_item(e.post_id, e.in_network) for e in feed.entries),
        permitted=permitted,
        memory_digest=digest,
        campaign=cfg.campaign if is_io else None,
        roster=state.roster(agent),
        strategy=state.strategy if is_io else None,
        following=frozenset(a.following),
        counters=a.memory.counters(),
        tag_exposures=dict(a.memory.tag_exposures),
        max_actions=cfg.max_actions,
    )


class _Failure:
    def __init__(self, exc: BackendError):
        self.exc = exc


def run_iteration(state: SimState, backend, regime_hooks=None) -> tuple[SimState, list[LogRecord]]:
    cfg = state.config
    if state.iteration >= cfg.iterations:
        raise RuntimeError("simulation already finished")
    t = state.iteration
    records: list[LogRecord] = list((regime_hooks or NoHook()).before_iteration(state))
    state.log.extend(records)
    n_hook = len(records)

    # every feed and context comes from the same pre-turn snapshot
    feeds, contexts = [], []
    for a in state.agents:
        feed = build_feed(state, a.agent_id)
        permitted = gate_actions(substream(cfg.seed, "gate", a.agent_id, t), cfg.activation_threshold)
        exposures = a.memory.tag_exposures
        for e in feed.entries:
            for tag in state.posts[e.post_id].hashtags:
                exposures[tag] = exposures.get(tag, 0) + 1
        feeds.append(feed)
        contexts.append(build_context(state, a.agent_id, feed, permitted))

    def decide(ctx: AgentContext):
        try:
            decision = backend.decide(ctx, substream(cfg.seed, "decide", ctx.agent, t))
            if len(decision.active) > cfg.max_actions:
                raise BackendError(f"{len(decision.active)} non-silent actions exceed cap {cfg.max_actions}")
            return decision
        except BackendError as exc:
            return _Failure(exc)

    if cfg.max_concurrency > 1 and len(contexts) > 1:
        with ThreadPoolExecutor(max_workers=cfg.max_concurrency) as pool:
            decisions = list(pool.map(decide, contexts))
    else:
        decisions = [decide(c) for c in contexts]

    failures = [d for d in decisions if isinstance(d, _Failure)]
    if decisions and len(failures) == len(decisions) and all(isinstance(f.exc, BackendUnavailable) for f in failures):
        raise BackendUnavailable(f"backend unreachable for every agent at iteration {t}: {failures[0].exc}")

    for ctx, feed, decision in zip(contexts, feeds, decisions):
        agent = ctx.agent
        records.append(MetaEvent("feed", t, agent, {"post_ids": feed.post_ids, "n_in_network": feed.n_in_network}))
        if isinstance(decision, _Failure):
            log.warning("iteration %d agent %d: backend failure, agent silent (%s)", t, agent, decision.exc)
            decision = AgentDecision.silent(f"backend failure: {decision.exc}")
        events = apply_decision(state, agent, decision, ctx.permitted)
        if not events:
            events = [ActionEvent(t, agent, ActionKind.SILENT, rationale=decision.rationale or None)]
            update_memory(state.agents[agent].memory, events)
        records.extend(events)
    state.log.extend(records[n_hook:])
    state.iteration += 1
    return state, records


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_simulation(
    config: SimulationConfig,
    personas: Optional[list[Persona]],
    backend,
    *,
    out_dir: Optional[str | Path] = None,
    regime_hooks=None,
    templates=None,
    backend_info: Optional[dict] = None,
) -> tuple[RunManifest, list[LogRecord]]:
    """Run ``config.iterations`` iterations; write ``events.jsonl`` + ``manifest.json`` under ``out_dir``.

    If the run aborts, whatever was flushed stays on disk and the manifest is
    marked ``aborted`` before the error propagates.
    """
    started = _now()
    state = init_simulation(config, personas, templates)
    cfg = state.config
    if regime_hooks is None:
        regime_hooks = hooks_for(cfg.regime, backend, templates=templates)
    run_id = f"{cfg.regime.kind.value}-s{cfg.seed}"
    log_file = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = EventLogFile.create(out_dir / "events.jsonl")

    manifest = RunManifest(cfg, run_id, started, started, str(out_dir / "events.jsonl") if out_dir else "",
                           backend_info=backend_info or {"backend": getattr(backend, "name", type(backend).__name__)})
    try:
        while state.iteration < cfg.iterations:
            _, records = run_iteration(state, backend, regime_hooks)
            if log_file is not None:
                log_file.append(records)
    except BaseException as exc:
        manifest.status = "aborted"
        manifest.error = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        manifest.finished_at = _now()
        if log_file is not None:
            manifest.log_digest = log_file.digest
            manifest.log_lines = log_file.line_count
            write_json(out_dir / "manifest.json", manifest.to_dict())
    return manifest, state.log
