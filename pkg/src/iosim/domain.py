"""Core domain types shared by the simulator and the analytics.

Agents are identified by dense integer ids. Ids are assigned in group blocks
(IO first, then aligned organic, then not-aligned organic), so the group of
any agent can be recovered from the configuration alone; analytics rely on
this when reading a bare event log.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Optional

SCHEMA_VERSION = 1
SOFTWARE_VERSION = "iosim-0.1.0"

_HASHTAG_RE = re.compile(r"#\w+")
_SINGLE_TAG_RE = re.compile(r"^#\w+$")


class ConfigError(ValueError):
    """Raised for invalid configuration or persona input."""


class EventError(ValueError):
    """Raised when an ActionEvent violates its per-kind field requirements."""


class AgentGroup(str, Enum):
    IO = "io"
    ALIGNED = "aligned"
    NOT_ALIGNED = "not_aligned"

    @property
    def is_organic(self) -> bool:
        return self is not AgentGroup.IO


GROUP_ORDER = (AgentGroup.IO, AgentGroup.ALIGNED, AgentGroup.NOT_ALIGNED)


class RegimeKind(str, Enum):
    COMMON_GOAL = "common_goal"
    TEAMMATE_AWARENESS = "teammate_awareness"
    COLLECTIVE_DECISION_MAKING = "collective_decision_making"


@dataclass(frozen=True)
class Regime:
    kind: RegimeKind = RegimeKind.COMMON_GOAL
    # only consulted under collective decision-making
    discussion_period: int = 5

    @property
    def roster_visible(self) -> bool:
        return self.kind is not RegimeKind.COMMON_GOAL


class ActionKind(str, Enum):
    POST = "post"
    RESHARE = "reshare"
    COMMENT = "comment"
    LIKE = "like"
    FOLLOW = "follow"
    SILENT = "silent"


# canonical intra-turn order used by the engine and the log
CANONICAL_ORDER = {
    ActionKind.POST: 0,
    ActionKind.RESHARE: 1,
    ActionKind.COMMENT: 2,
    ActionKind.LIKE: 3,
    ActionKind.FOLLOW: 4,
    ActionKind.SILENT: 5,
}

GATED_KINDS = (
    ActionKind.POST,
    ActionKind.RESHARE,
    ActionKind.COMMENT,
    ActionKind.LIKE,
    ActionKind.FOLLOW,
)


def extract_hashtags(text: str | None) -> list[str]:
    """Return the lowercased, deduplicated hashtags of ``text`` in first-seen order."""
    if not text:
        return []
    seen: dict[str, None] = {}
    for match in _HASHTAG_RE.findall(text):
        seen.setdefault(match.lower(), None)
    return list(seen)


@dataclass(frozen=True)
class Persona:
    name: str
    profile_summary: str
    stance: AgentGroup

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise ConfigError("persona name must be non-empty")
        if not self.profile_summary.strip():
            raise ConfigError(f"persona {self.name!r} has an empty profile summary")

    @property
    def prompt(self) -> str:
        return f"Name: {self.name}\n{self.profile_summary}"


@dataclass(frozen=True)
class Campaign:
    topic: str = "the 2024 U.S. presidential election"
    candidate: str = "Candidate X"
    hashtag: str = "#jobsfirst"


@dataclass(frozen=True)
class ActionEvent:
    """One agent action; the unit of the append-only log."""

    iteration: int
    actor: int
    kind: ActionKind
    post_id: Optional[int] = None
    target_post: Optional[int] = None
    target_agent: Optional[int] = None
    text: Optional[str] = None
    hashtags: tuple[str, ...] = ()
    rationale: Optional[str] = None

    def __post_init__(self) -> None:
        if not isinstance(self.kind, ActionKind):
            object.__setattr__(self, "kind", ActionKind(self.kind))
        object.__setattr__(self, "hashtags", tuple(self.hashtags))
        if self.iteration < 0 or self.actor < 0:
            raise EventError("iteration and actor must be non-negative")
        kind = self.kind
        if kind is ActionKind.POST and (self.post_id is None or not self.text):
            raise EventError("post requires post_id and text")
        if kind in (ActionKind.RESHARE, ActionKind.COMMENT, ActionKind.LIKE) and self.target_post is None:
            raise EventError(f"{kind.value} requires target_post")
        if kind is ActionKind.FOLLOW:
            if self.target_agent is None:
                raise EventError("follow requires target_agent")
            if self.target_agent == self.actor:
                raise EventError("an agent cannot follow itself")
        if kind is ActionKind.SILENT and any(
            v is not None for v in (self.post_id, self.target_post, self.target_agent, self.text)
        ):
            raise EventError("silent carries no payload")
        if self.text is not None and self.hashtags:
            allowed = set(extract_hashtags(self.text))
            if not set(self.hashtags) <= allowed:
                raise EventError("hashtags must be extracted from the event text")

    @property
    def sort_key(self) -> tuple[int, int, int]:
        return (self.iteration, self.actor, 1 + CANONICAL_ORDER[self.kind])

    def to_dict(self) -> dict[str, Any]:
        return {
            "iteration": self.iteration,
            "actor": self.actor,
            "kind": self.kind.value,
            "post_id": self.post_id,
            "target_post": self.target_post,
            "target_agent": self.target_agent,
            "text": self.text,
            "hashtags": list(self.hashtags),
            "rationale": self.rationale,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ActionEvent":
        return cls(
            iteration=int(d["iteration"]),
            actor=int(d["actor"]),
            kind=ActionKind(d["kind"]),
            post_id=d.get("post_id"),
            target_post=d.get("target_post"),
            target_agent=d.get("target_agent"),
            text=d.get("text"),
            hashtags=tuple(d.get("hashtags") or ()),
            rationale=d.get("rationale"),
        )


@dataclass(frozen=True)
class MetaEvent:
    """A non-platform log record (feed delivery or IO discussion).

    Meta records never enter interaction graphs; they exist so that exposure
    analytics and discussion cadence can be recomputed from the log alone.
    """

    meta: str  # "feed" | "discussion"
    iteration: int
    actor: Optional[int] = None
    payload: dict = field(default_factory=dict)

    @property
    def sort_key(self) -> tuple[int, int, int]:
        return (self.iteration, -1 if self.actor is None else self.actor, 0)

    def to_dict(self) -> dict[str, Any]:
        return {"meta": self.meta, "iteration": self.iteration, "actor": self.actor, **self.payload}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "MetaEvent":
        payload = {k: v for k, v in d.items() if k not in ("meta", "iteration", "actor")}
        return cls(meta=d["meta"], iteration=int(d["iteration"]), actor=d.get("actor"), payload=payload)


LogRecord = ActionEvent | MetaEvent


def record_from_dict(d: dict[str, Any]) -> LogRecord:
    if "meta" in d:
        return MetaEvent.from_dict(d)
    return ActionEvent.from_dict(d)


def action_events(log) -> list[ActionEvent]:
    return [r for r in log if isinstance(r, ActionEvent)]


@dataclass(frozen=True)
class SimulationConfig:
    n_io: int = 10
    n_aligned: int = 20
    n_not_aligned: int = 20
    iterations: int = 50
    seed: int = 0
    regime: Regime = field(default_factory=Regime)
    campaign: Campaign = field(default_factory=Campaign)
    feed_size: int = 100
    in_network_fraction: float = 0.5
    activation_threshold: float = 0.5
    memory_size: int = 50
    context_window: int = 10
    max_actions: int = 3
    max_concurrency: int = 1
    backend: str = "scripted"
    backend_params: dict = field(default_factory=dict)
    # analysis switches
    include_likes: bool = False
    strict_exposure: bool = False

    @property
    def n_agents(self) -> int:
        return self.n_io + self.n_aligned + self.n_not_aligned

    def group_of(self, agent: int) -> AgentGroup:
        if agent < 0 or agent >= self.n_agents:
            raise KeyError(f"agent {agent} outside population of {self.n_agents}")
        if agent < self.n_io:
            return AgentGroup.IO
        if agent < self.n_io + self.n_aligned:
            return AgentGroup.ALIGNED
        return AgentGroup.NOT_ALIGNED

    def members(self, group: AgentGroup) -> list[int]:
        return [a for a in range(self.n_agents) if self.group_of(a) is group]

    def organic(self) -> list[int]:
        return list(range(self.n_io, self.n_agents))

    @property
    def in_network_quota(self) -> int:
        return int(self.feed_size * self.in_network_fraction)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["regime"] = {"kind": self.regime.kind.value, "discussion_period": self.regime.discussion_period}
        return d

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "SimulationConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(raw)
        if "regime" in kw:
            r = kw["regime"]
            if isinstance(r, str):
                r = {"kind": r}
            try:
                kw["regime"] = Regime(RegimeKind(r["kind"]), int(r.get("discussion_period", 5)))
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"invalid regime: {r!r}") from exc
        if "campaign" in kw:
            c = kw["campaign"]
            extra = set(c) - {"topic", "candidate", "hashtag"}
            if extra:
                raise ConfigError(f"unknown campaign keys: {sorted(extra)}")
            kw["campaign"] = Campaign(**c)
        return cls(**kw)


def validate_config(raw: SimulationConfig, *, allow_empty_run: bool = False) -> SimulationConfig:
    """Check ``raw`` and return its normalized form (hashtag lowercased).

    ``allow_empty_run`` admits ``iterations == 0`` (a run that only writes a manifest).
    """
    counts = (raw.n_io, raw.n_aligned, raw.n_not_aligned)
    if any(not isinstance(c, int) or c < 0 for c in counts):
        raise ConfigError("group counts must be non-negative integers")
    if sum(counts) == 0:
        raise ConfigError("empty population")
    if sum(counts) < 2:
        raise ConfigError("population must contain at least 2 agents")
    if not isinstance(raw.iterations, int) or raw.iterations < (0 if allow_empty_run else 1):
        raise ConfigError("iterations must be a positive integer")
    if not 0.0 <= raw.in_network_fraction <= 1.0:
        raise ConfigError("in_network_fraction must lie in [0, 1]")
    if not 0.0 <= raw.activation_threshold <= 1.0:
        raise ConfigError("activation_threshold must lie in [0, 1]")
    if raw.feed_size < 1:
        raise ConfigError("feed_size must be positive")
    if raw.memory_size < 1 or raw.context_window < 1:
        raise ConfigError("memory_size and context_window must be positive")
    if raw.max_actions < 1 or raw.max_concurrency < 1:
        raise ConfigError("max_actions and max_concurrency must be positive")
    if raw.regime.discussion_period < 1:
        raise ConfigError("discussion_period must be positive")
    if raw.backend not in ("scripted", "llm", "replay"):
        raise ConfigError(f"unknown backend {raw.backend!r}")
    if not -(2**63) <= raw.seed < 2**64:
        raise ConfigError("seed must fit in 64 bits")

    tag = (raw.campaign.hashtag or "").strip()
    if not tag or tag == "#":
        raise ConfigError("empty hashtag")
    if not tag.startswith("#"):
        tag = "#" + tag
    tag = tag.lower()
    if not _SINGLE_TAG_RE.match(tag):
        raise ConfigError(f"hashtag must be a single token, got {raw.campaign.hashtag!r}")
    return replace(raw, campaign=replace(raw.campaign, hashtag=tag))


def load_config(path: str | Path) -> SimulationConfig:
    """Read a JSON or YAML config file and validate it."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix in (".yaml", ".yml"):
            import yaml

            raw = yaml.safe_load(text) or {}
        else:
            raw = json.loads(text)
    except Exception as exc:  # noqa: BLE001 - any parser failure is a config error
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config document must be a mapping")
    # a run manifest carries its config snapshot under "config"
    is_manifest = "config" in raw and "run_id" in raw
    if is_manifest:
        raw = raw["config"]
    try:
        return validate_config(SimulationConfig.from_dict(raw), allow_empty_run=is_manifest)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class RunManifest:
    config: SimulationConfig
    run_id: str
    started_at: str
    finished_at: str
    event_log: str
    log_digest: str = ""
    log_lines: int = 0
    software_version: str = SOFTWARE_VERSION
    backend_info: dict = field(default_factory=dict)
    status: str = "complete"
    error: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "run_id": self.run_id,
            "config": self.config.to_dict(),
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "event_log": self.event_log,
            "log_digest": self.log_digest,
            "log_lines": self.log_lines,
            "software_version": self.software_version,
            "backend_info": self.backend_info,
            "status": self.status,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunManifest":
        return cls(
            config=validate_config(SimulationConfig.from_dict(d["config"]), allow_empty_run=True),
            run_id=d["run_id"],
            started_at=d["started_at"],
            finished_at=d["finished_at"],
            event_log=d["event_log"],
            log_digest=d.get("log_digest", ""),
            log_lines=d.get("log_lines", 0),
            software_version=d.get("software_version", SOFTWARE_VERSION),
            backend_info=d.get("backend_info", {}),
            status=d.get("status", "complete"),
            error=d.get("error"),
        )
