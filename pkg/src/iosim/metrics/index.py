from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from ..domain import ActionEvent, ActionKind, LogRecord, MetaEvent

POST_KINDS = (ActionKind.POST, ActionKind.RESHARE, ActionKind.COMMENT)


def _record_key(rec: LogRecord) -> tuple:
    if isinstance(rec, MetaEvent):
        return (*rec.sort_key, rec.meta, -1, -1, "")
    return (
        *rec.sort_key,
        "",
        -1 if rec.post_id is None else rec.post_id,
        -1 if rec.target_post is None else rec.target_post,
        -1 if rec.target_agent is None else rec.target_agent,
        rec.text or "",
    )


@dataclass(frozen=True)
class PostInfo:
    post_id: int
    author: int
    iteration: int
    kind: ActionKind
    parent: Optional[int]
    hashtags: tuple[str, ...]
    text: str
    position: int


class LogIndex:
    """Read-only lookups over a run log: posts by id, target authors, root resolution."""

    def __init__(self, log: Iterable[LogRecord]):
        # canonical order makes every downstream sum independent of input order
        self.records: list[LogRecord] = sorted(log, key=_record_key)
        self.events: list[ActionEvent] = []
        self.feeds: list[tuple[int, MetaEvent]] = []
        self.discussions: list[MetaEvent] = []
        self.posts: dict[int, PostInfo] = {}
        for pos, rec in enumerate(self.records):
            if isinstance(rec, MetaEvent):
                if rec.meta == "feed":
                    self.feeds.append((pos, rec))
                elif rec.meta == "discussion":
                    self.discussions.append(rec)
                continue
            self.events.append(rec)
            if rec.kind in POST_KINDS and rec.post_id is not None:
                parent = None if rec.kind is ActionKind.POST else rec.target_post
                self.posts[rec.post_id] = PostInfo(
                    rec.post_id, rec.actor, rec.iteration, rec.kind, parent, rec.hashtags, rec.text or "", pos
                )
        self._positions = {id(ev): pos for pos, ev in enumerate(self.records)}

    def position(self, ev: LogRecord) -> int:
        return self._positions[id(ev)]

    @property
    def last_iteration(self) -> int:
        return max((r.iteration for r in self.records), default=-1)

    def target_author(self, ev: ActionEvent) -> Optional[int]:
        if ev.kind is ActionKind.FOLLOW:
            return ev.target_agent
        if ev.target_post is not None:
            info = self.posts.get(ev.target_post)
            if info is not None:
                return info.author
        return ev.target_agent

    def reshare_root(self, post_id: int) -> int:
        """Follow re-share links back to the content that was first re-shared."""
        seen = set()
        current = post_id
        while True:
            info = self.posts.get(current)
            if info is None or info.kind is not ActionKind.RESHARE or info.parent is None or current in seen:
                return current
            seen.add(current)
            current = info.parent

    def of_kind(self, *kinds: ActionKind) -> list[ActionEvent]:
        return [e for e in self.events if e.kind in kinds]


def as_index(log) -> LogIndex:
    return log if isinstance(log, LogIndex) else LogIndex(log)
