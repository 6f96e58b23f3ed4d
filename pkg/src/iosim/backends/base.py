from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional, Protocol

from ..domain import CANONICAL_ORDER, ActionKind, AgentGroup, Campaign
from ..regimes import CollectiveStrategy


class BackendError(RuntimeError):
    """A backend could not produce a decision; the engine makes the agent silent."""


class BackendUnavailable(BackendError):
    """The backend endpoint could not be reached at all (after retries)."""


class ReplyParseError(BackendError):
    pass


@dataclass(frozen=True)
class FeedItem:
    post_id: int
    author: int
    author_name: str
    text: str
    hashtags: tuple[str, ...]
    in_network: bool
    kind: str = "original"

    def render(self) -> str:
        label = {"original": "posted", "reshare": "re-shared", "comment": "commented"}.get(self.kind, self.kind)
        return f"[post {self.post_id}] {self.author_name} (agent {self.author}) {label}: {self.text}"


@dataclass(frozen=True)
class AgentContext:
    """Everything one agent may see when choosing its actions for one turn.

    ``campaign`` is set only for IO agents and ``roster`` only when the regime
    reveals teammates; organic contexts never carry either.
    """

    agent: int
    name: str
    group: AgentGroup
    iteration: int
    system_prompt: str
    feed: tuple[FeedItem, ...]
    permitted: frozenset[ActionKind]
    memory_digest: tuple[str, ...] = ()
    campaign: Optional[Campaign] = None
    roster: Optional[tuple[tuple[int, str], ...]] = None
    strategy: Optional[CollectiveStrategy] = None
    following: frozenset[int] = frozenset()
    counters: dict = field(default_factory=dict)
    tag_exposures: dict = field(default_factory=dict)
    max_actions: int = 3

    def render_feed(self) -> str:
        if not self.feed:
            return "(your feed is empty)"
        return "\n".join(item.render() for item in self.feed)

    @property
    def teammates(self) -> frozenset[int]:
        return frozenset(a for a, _ in self.roster) if self.roster else frozenset()


@dataclass(frozen=True)
class DiscussionContext:
    agent: int
    name: str
    iteration: int
    system_prompt: str
    materials_text: str
    n_steps: int
    own_summary: dict = field(default_factory=dict)
    aggregate: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SubAction:
    kind: ActionKind
    target_post: Optional[int] = None
    target_agent: Optional[int] = None
    text: Optional[str] = None


@dataclass(frozen=True)
class AgentDecision:
    actions: tuple[SubAction, ...]
    rationale: str = ""

    @classmethod
    def silent(cls, rationale: str = "") -> "AgentDecision":
        return cls((SubAction(ActionKind.SILENT),), rationale)

    @property
    def active(self) -> tuple[SubAction, ...]:
        """Non-silent sub-actions in canonical order."""
        acts = [a for a in self.actions if a.kind is not ActionKind.SILENT]
        return tuple(sorted(acts, key=lambda a: CANONICAL_ORDER[a.kind]))

    @property
    def is_silent(self) -> bool:
        return not self.active

    def check(self, permitted: frozenset[ActionKind], max_actions: int = 3) -> None:
        if len(self.active) > max_actions:
            raise BackendError(f"decision has {len(self.active)} non-silent actions (cap {max_actions})")
        bad = {a.kind for a in self.active} - set(permitted)
        if bad:
            raise BackendError(f"decision uses kinds not permitted this turn: {sorted(k.value for k in bad)}")


class Backend(Protocol):
    name: str

    def decide(self, context: AgentContext, rng: random.Random) -> AgentDecision: ...

    def recommend(self, context: DiscussionContext, rng: random.Random) -> str: ...
