"""Operational regimes: system prompts, the periodic IO discussion, and the orchestrator.

Under collective decision-making every IO agent reads a summary of the
previous window, proposes three recommendations, and an orchestrator merges
them into a ranked strategy of at most five items that is then injected into
every IO agent's prompt until the next discussion replaces it.
"""

from __future__ import annotations

import logging
import re
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .domain import ActionKind, AgentGroup, Campaign, MetaEvent, Persona, Regime, RegimeKind
from .metrics.index import as_index
from .rng import substream

log = logging.getLogger(__name__)

TEMPLATE_ROLES = ("organic", "io_common_goal", "io_teammate_awareness", "discussion", "orchestrator")


class PromptError(ValueError):
    pass


class RecommendationParseError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    role: str
    text: str

    @property
    def placeholders(self) -> set[str]:
        return {name for _, name, _, _ in string.Formatter().parse(self.text) if name}

    def render(self, **values: str) -> str:
        missing = self.placeholders - set(values)
        if missing:
            raise PromptError(f"template {self.role!r} has unbound placeholders: {sorted(missing)}")
        return self.text.format_map(values)


def default_templates() -> dict[str, PromptTemplate]:
    pkg = resources.files("iosim") / "templates"
    return {role: PromptTemplate(role, (pkg / f"{role}.txt").read_text(encoding="utf-8").rstrip("\n")) for role in TEMPLATE_ROLES}


def load_templates(directory: str | Path) -> dict[str, PromptTemplate]:
    """Defaults overridden by any ``<role>.txt`` present in ``directory``."""
    templates = default_templates()
    for role in TEMPLATE_ROLES:
        path = Path(directory) / f"{role}.txt"
        if path.exists():
            templates[role] = PromptTemplate(role, path.read_text(encoding="utf-8").rstrip("\n"))
    return templates


@dataclass(frozen=True)
class StrategyItem:
    description: str
    supporter_count: int


@dataclass(frozen=True)
class CollectiveStrategy:
    items: tuple[StrategyItem, ...]

    def __post_init__(self) -> None:
        if len(self.items) > 5:
            raise ValueError("a collective strategy holds at most five items")
        counts = [i.supporter_count for i in self.items]
        if any(a < b for a, b in zip(counts, counts[1:])):
            raise ValueError("supporter counts must be non-increasing")

    def render(self) -> str:
        return "\n".join(
            f"{n}. {item.description} (supported by {item.supporter_count} agents)" for n, item in enumerate(self.items, 1)
        )

    def to_list(self) -> list[dict]:
        return [{"description": i.description, "supporter_count": i.supporter_count} for i in self.items]


@dataclass(frozen=True)
class Recommendation:
    author: int
    items: tuple[str, str, str]

    def __post_init__(self) -> None:
        if len(self.items) != 3:
            raise RecommendationParseError(f"expected exactly 3 recommendations, got {len(self.items)}")


def render_system_prompt(
    regime: Regime,
    persona: Persona,
    campaign: Campaign,
    roster: Optional[list[str]] = None,
    strategy: Optional[CollectiveStrategy] = None,
    templates: Optional[dict[str, PromptTemplate]] = None,
) -> str:
    """System prompt for one agent.

    Organic agents get the organic template whatever the regime. IO agents get
    the common-goal template, or the teammate template (with ``roster`` being
    the names of the other IO agents) when the regime reveals teammates.
    """
    templates = templates or _defaults()
    values = {"TOPIC": campaign.topic, "persona_prompt": persona.prompt}
    if persona.stance is not AgentGroup.IO:
        return templates["organic"].render(**values)

    values.update(CANDIDATE=campaign.candidate, HASHTAG=campaign.hashtag)
    if regime.kind is RegimeKind.COMMON_GOAL:
        text = templates["io_common_goal"].render(**values)
    else:
        if roster is None:
            raise PromptError("teammate roster is required for IO agents in this regime")
        text = templates["io_teammate_awareness"].render(IO_NAMES=", ".join(roster), **values)
    if strategy is not None and strategy.items:
        text += "\n\nCollective strategy agreed by your team for the coming rounds:\n" + strategy.render()
    return text


_cached_defaults: dict[str, PromptTemplate] = {}


def _defaults() -> dict[str, PromptTemplate]:
    if not _cached_defaults:
        _cached_defaults.update(default_templates())
    return _cached_defaults


def should_hold_discussion(iteration: int, regime: Regime) -> bool:
    return (
        regime.kind is RegimeKind.COLLECTIVE_DECISION_MAKING
        and iteration > 0
        and iteration % regime.discussion_period == 0
    )


# -- performance materials ---------------------------------------------------------


@dataclass
class AgentSummary:
    posts: list[tuple[int, str]] = field(default_factory=list)
    reshares_made: int = 0
    comments_made: int = 0
    reshares_received: int = 0
    comments_received: int = 0
    likes_received: int = 0

    def as_dict(self) -> dict:
        return {
            "posts": len(self.posts),
            "reshares_made": self.reshares_made,
            "comments_made": self.comments_made,
            "reshares_received": self.reshares_received,
            "comments_received": self.comments_received,
            "likes_received": self.likes_received,
        }


@dataclass
class PerformanceMaterials:
    window: tuple[int, int]  # [start, end)
    per_agent: dict[int, AgentSummary]
    aggregate: dict[str, int]
    io_io_actions: list[dict]

    def render(self, names: dict[int, str]) -> str:
        lines = [f"Performance materials for iterations {self.window[0]}-{self.window[1] - 1}.", "", "Aggregated summary:"]
        lines += [f"- {k.replace('_', ' ')}: {v}" for k, v in self.aggregate.items()]
        lines.append("")
        lines.append("Per-agent summaries:")
        for agent, s in sorted(self.per_agent.items()):
            d = s.as_dict()
            lines.append(
                f"- {names.get(agent, agent)}: {d['posts']} posts, {d['reshares_received']} re-shares and "
                f"{d['comments_received']} comments received, {d['reshares_made']} re-shares made"
            )
            for pid, text in s.posts[-3:]:
                lines.append(f"    [post {pid}] {text}")
        lines.append("")
        lines.append(f"IO <-> IO actions ({len(self.io_io_actions)}):")
        for a in self.io_io_actions[-30:]:
            lines.append(f"- it{a['iteration']}: {names.get(a['actor'], a['actor'])} {a['kind']} {names.get(a['target_agent'], a['target_agent'])}")
        return "\n".join(lines)


def assemble_performance_materials(log, window: tuple[int, int], io_agents) -> PerformanceMaterials:
    """Summarize IO activity for iterations ``window[0] <= t < window[1]``."""
    start, end = window
    if end <= start:
        raise ValueError("window must be non-empty")
    idx = as_index(log)
    io = set(io_agents)
    per = {a: AgentSummary() for a in sorted(io)}
    io_io: list[dict] = []
    for ev in idx.events:
        if not start <= ev.iteration < end:
            continue
        target = idx.target_author(ev)
        if ev.actor in io:
            s = per[ev.actor]
            if ev.kind is ActionKind.POST:
                s.posts.append((ev.post_id, ev.text or ""))
            elif ev.kind is ActionKind.RESHARE:
                s.reshares_made += 1
            elif ev.kind is ActionKind.COMMENT:
                s.comments_made += 1
            if target in io and target != ev.actor and ev.kind is not ActionKind.SILENT:
                io_io.append({"iteration": ev.iteration, "actor": ev.actor, "kind": ev.kind.value,
                              "target_agent": target, "target_post": ev.target_post})
        if target in io and target != ev.actor:
            if ev.kind is ActionKind.RESHARE:
                per[target].reshares_received += 1
            elif ev.kind is ActionKind.COMMENT:
                per[target].comments_received += 1
            elif ev.kind is ActionKind.LIKE:
                per[target].likes_received += 1
    aggregate = {
        "posts": sum(len(s.posts) for s in per.values()),
        "reshares_made": sum(s.reshares_made for s in per.values()),
        "comments_made": sum(s.comments_made for s in per.values()),
        "reshares_received": sum(s.reshares_received for s in per.values()),
        "comments_received": sum(s.comments_received for s in per.values()),
        "likes_received": sum(s.likes_received for s in per.values()),
        "io_io_actions": len(io_io),
    }
    return PerformanceMaterials(window, per, aggregate, io_io)


# -- recommendations and consolidation ------------------------------------------------

_NUMBERED = re.compile(r"^\s*(?:\*\*)?(\d+)[.)]\s*(?:\*\*)?\s*(.+?)\s*$")


def parse_numbered_list(raw: str) -> list[str]:
    items = []
    for line in raw.splitlines():
        m = _NUMBERED.match(line)
        if m and m.group(2).strip():
            items.append(m.group(2).strip())
    return items


def parse_recommendations(raw: str) -> tuple[str, str, str]:
    items = parse_numbered_list(raw)
    if len(items) != 3:
        raise RecommendationParseError(f"expected exactly 3 numbered points, found {len(items)}")
    return tuple(items)  # type: ignore[return-value]


def collect_recommendations(
    materials: PerformanceMaterials,
    io_agents: list[tuple[int, str, str]],
    backend,
    *,
    seed: int,
    iteration: int,
    n_steps: int,
    templates: Optional[dict[str, PromptTemplate]] = None,
    max_workers: int = 1,
) -> list[Recommendation]:
    """Ask every IO agent ``(id, name, system_prompt)`` for three recommendations.

    Agents whose replies fail to parse (or whose backend call fails) are left out.
    """
    from .backends.base import BackendError, DiscussionContext

    templates = templates or _defaults()
    names = {a: n for a, n, _ in io_agents}
    materials_text = materials.render(names)
    instruction = templates["discussion"].render(N_DISCUSSION_STEPS=str(n_steps))

    def ask(entry):
        agent, name, system_prompt = entry
        ctx = DiscussionContext(
            agent=agent,
            name=name,
            iteration=iteration,
            system_prompt=system_prompt,
            materials_text=materials_text + "\n\n" + instruction,
            n_steps=n_steps,
            own_summary=materials.per_agent.get(agent, AgentSummary()).as_dict(),
            aggregate=dict(materials.aggregate),
        )
        try:
            raw = backend.recommend(ctx, substream(seed, "discuss", agent, iteration))
            return Recommendation(agent, parse_recommendations(raw))
        except (RecommendationParseError, BackendError) as exc:
            log.warning("discussion at iteration %d: dropping agent %d (%s)", iteration, agent, exc)
            return None

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(ask, io_agents))
    else:
        results = [ask(e) for e in io_agents]
    return [r for r in results if r is not None]


_PUNCT = re.compile(r"[^\w\s]")


def normalize_item(text: str) -> str:
    return " ".join(_PUNCT.sub(" ", text.lower()).split())


def jaccard(a: set[str], b: set[str]) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def consolidate_strategies(
    recs: list[Recommendation],
    mode: str = "deterministic",
    *,
    backend=None,
    threshold: float = 0.6,
    templates: Optional[dict[str, PromptTemplate]] = None,
) -> CollectiveStrategy:
    if not recs:
        raise ValueError("no recommendations to consolidate")
    if mode == "llm":
        return _consolidate_llm(recs, backend, templates or _defaults())
    if mode != "deterministic":
        raise ValueError(f"unknown consolidation mode {mode!r}")

    # (normalized, original, author); sorting first makes the result input-order free
    entries = sorted((normalize_item(t), t, r.author) for r in recs for t in r.items)
    tokens = [set(n.split()) for n, _, _ in entries]
    parent = list(range(len(entries)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(entries)):
        for j in range(i + 1, len(entries)):
            if jaccard(tokens[i], tokens[j]) >= threshold:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    clusters: dict[int, list[int]] = {}
    for i in range(len(entries)):
        clusters.setdefault(find(i), []).append(i)

    ranked = []
    for members in clusters.values():
        authors = {entries[i][2] for i in members}
        freq: dict[str, int] = {}
        for i in members:
            freq[entries[i][0]] = freq.get(entries[i][0], 0) + 1
        rep = min(freq, key=lambda n: (-freq[n], n))
        original = min(entries[i][1] for i in members if entries[i][0] == rep)
        ranked.append((-len(authors), rep, original))
    ranked.sort()
    return CollectiveStrategy(tuple(StrategyItem(orig, -neg) for neg, _, orig in ranked[:5]))


_COUNT_RE = re.compile(r"(\d+)\s+(?:of\s+\d+\s+)?agents?", re.I)


def parse_strategy_list(raw: str) -> CollectiveStrategy:
    items = parse_numbered_list(raw)[:5]
    if not items:
        raise RecommendationParseError("orchestrator reply contains no numbered items")
    parsed = []
    for pos, text in enumerate(items):
        m = _COUNT_RE.search(text)
        parsed.append((pos, text, int(m.group(1)) if m else 0))
    # stable re-sort keeps the orchestrator's order among equal counts
    parsed.sort(key=lambda p: (-p[2], p[0]))
    return CollectiveStrategy(tuple(StrategyItem(t, c) for _, t, c in parsed))


def _consolidate_llm(recs, backend, templates) -> CollectiveStrategy:
    if backend is None or not hasattr(backend, "orchestrate"):
        raise ValueError("llm consolidation needs a backend with an orchestrate() method")
    lines = []
    for r in recs:
        lines.append(f"Agent {r.author}:")
        lines += [f"{n}. {t}" for n, t in enumerate(r.items, 1)]
    raw = backend.orchestrate(templates["orchestrator"].render(), "\n".join(lines))
    return parse_strategy_list(raw)


def broadcast_strategy(state, strategy: CollectiveStrategy):
    """Store ``strategy`` as the one IO agents see from now on (replacing any earlier one)."""
    state.strategy = strategy
    return state


class DiscussionHook:
    """Runs the discussion cycle at the start of each qualifying iteration."""

    def __init__(self, backend, *, mode: str = "deterministic", templates=None, threshold: float = 0.6):
        self.backend = backend
        self.mode = mode
        self.templates = templates
        self.threshold = threshold

    def before_iteration(self, state) -> list[MetaEvent]:
        cfg = state.config
        t = state.iteration
        if not should_hold_discussion(t, cfg.regime):
            return []
        period = cfg.regime.discussion_period
        window = (max(0, t - period), t)
        io = cfg.members(AgentGroup.IO)
        materials = assemble_performance_materials(state.log, window, io)
        entries = [(a, state.agents[a].persona.name, state.system_prompt(a)) for a in io]
        recs = collect_recommendations(
            materials,
            entries,
            self.backend,
            seed=cfg.seed,
            iteration=t,
            n_steps=period,
            templates=self.templates,
            max_workers=cfg.max_concurrency,
        )
        payload = {
            "window": list(window),
            "recommendations": [{"author": r.author, "items": list(r.items)} for r in recs],
        }
        if recs:
            strategy = consolidate_strategies(
                recs, self.mode, backend=self.backend, threshold=self.threshold, templates=self.templates
            )
            broadcast_strategy(state, strategy)
            payload["strategy"] = strategy.to_list()
        else:
            log.warning("discussion at iteration %d skipped: no usable recommendations", t)
            payload["strategy"] = None
        return [MetaEvent("discussion", t, None, payload)]


class NoHook:
    def before_iteration(self, state) -> list[MetaEvent]:
        return []


def hooks_for(regime: Regime, backend, **kw):
    if regime.kind is RegimeKind.COLLECTIVE_DECISION_MAKING:
        return DiscussionHook(backend, **kw)
    return NoHook()
