"""Durable run artifacts: the JSONL event log, JSON documents, and the dashboard bundle."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Iterable

from .domain import SCHEMA_VERSION, ActionEvent, ActionKind, GROUP_ORDER, LogRecord, record_from_dict


class LogFormatError(ValueError):
    def __init__(self, path, lineno: int, reason: str):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.lineno = lineno


class OrderingError(ValueError):
    pass


def canonical_json(obj: Any) -> str:
    # repr-based float text is the shortest round-trip form on every platform
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def write_json(path: str | Path, obj: Any) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def record_line(rec: LogRecord) -> str:
    return canonical_json(rec.to_dict())


class EventLogFile:
    """Append-only JSONL log with a running SHA-256 over its lines."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._hash = hashlib.sha256()
        self.line_count = 0
        self._last_key: tuple | None = None
        if self.path.exists():
            for rec in load_events(self.path):
                self._absorb(record_line(rec), rec.sort_key)

    @classmethod
    def create(cls, path: str | Path) -> "EventLogFile":
        Path(path).write_text("", encoding="utf-8")
        return cls(path)

    @property
    def digest(self) -> str:
        return self._hash.hexdigest()

    def _absorb(self, line: str, key: tuple) -> None:
        self._hash.update(line.encode("utf-8") + b"\n")
        self.line_count += 1
        self._last_key = key

    def append(self, records: Iterable[LogRecord]) -> "EventLogFile":
        return append_events(self, records)


def append_events(file: EventLogFile, records: Iterable[LogRecord]) -> EventLogFile:
    """Append ``records`` (which must extend the file's ordering) durably."""
    records = list(records)
    last = file._last_key
    for rec in records:
        key = rec.sort_key
        if last is not None and key < last:
            raise OrderingError(f"record {key} would precede {last} already in the log")
        last = key
    if not records:
        return file
    lines = [record_line(r) for r in records]
    with open(file.path, "a", encoding="utf-8") as fh:
        fh.write("".join(line + "\n" for line in lines))
        fh.flush()
        os.fsync(fh.fileno())
    for rec, line in zip(records, lines):
        file._absorb(line, rec.sort_key)
    return file


def load_events(path: str | Path) -> list[LogRecord]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"event log not found: {path}")
    raw = path.read_text(encoding="utf-8")
    lines = raw.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    elif lines:
        # no trailing newline: the writer always terminates lines, so the last one is truncated
        raise LogFormatError(path, len(lines), "truncated final line")
    out = []
    for lineno, line in enumerate(lines, 1):
        try:
            out.append(record_from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise LogFormatError(path, lineno, f"malformed record ({exc})") from exc
    return out


def log_digest(records: Iterable[LogRecord]) -> str:
    h = hashlib.sha256()
    for rec in records:
        h.update(record_line(rec).encode("utf-8") + b"\n")
    return h.hexdigest()


# -- dashboard bundle ---------------------------------------------------------------

NETWORK_KINDS = (ActionKind.FOLLOW, ActionKind.RESHARE, ActionKind.COMMENT, ActionKind.LIKE)


def export_dashboard_bundle(log, config, personas=None) -> dict:
    """Dashboard panels as data: per-iteration networks, adoption series, group interaction matrix.

    ``snapshots[k]`` holds the cumulative weighted edges after ``k`` iterations,
    so there are ``iterations + 1`` snapshots, the first one empty.
    """
    from .metrics.diffusion import adoption_curve
    from .metrics.index import as_index

    idx = as_index(log)
    n_iter = config.iterations
    names = {i: p.name for i, p in enumerate(personas)} if personas else {}
    roster = [
        {"agent": a, "name": names.get(a, f"agent-{a}"), "group": config.group_of(a).value}
        for a in range(config.n_agents)
    ]

    by_iter: dict[int, list[ActionEvent]] = {}
    for ev in idx.events:
        by_iter.setdefault(ev.iteration, []).append(ev)
    cumulative = {k.value: {} for k in NETWORK_KINDS}
    snapshots = [{"iteration": 0, "networks": {k: [] for k in cumulative}}]
    for t in range(n_iter):
        for ev in by_iter.get(t, ()):
            if ev.kind not in NETWORK_KINDS:
                continue
            target = idx.target_author(ev)
            if target is None or target == ev.actor:
                continue
            edges = cumulative[ev.kind.value]
            edges[(ev.actor, target)] = edges.get((ev.actor, target), 0) + 1
        snapshots.append({
            "iteration": t + 1,
            "networks": {k: [[s, d, w] for (s, d), w in sorted(e.items())] for k, e in cumulative.items()},
        })

    adoption = {g.value: adoption_curve(idx, config.campaign.hashtag, config.members(g), n_iter) for g in GROUP_ORDER}
    adoption["all"] = adoption_curve(idx, config.campaign.hashtag, range(config.n_agents), n_iter)

    matrix = {}
    for kind in NETWORK_KINDS:
        counts = {g.value: {h.value: 0 for h in GROUP_ORDER} for g in GROUP_ORDER}
        for ev in idx.events:
            if ev.kind is not kind:
                continue
            target = idx.target_author(ev)
            if target is None or target == ev.actor or not 0 <= target < config.n_agents:
                continue
            counts[config.group_of(ev.actor).value][config.group_of(target).value] += 1
        rows = {}
        for src, row in counts.items():
            total = sum(row.values())
            rows[src] = {dst: (c / total if total else 0.0) for dst, c in row.items()}
        matrix[kind.value] = {"counts": counts, "proportions": rows}

    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "dashboard_bundle",
        "iterations": n_iter,
        "hashtag": config.campaign.hashtag,
        "regime": config.regime.kind.value,
        "roster": roster,
        "snapshots": snapshots,
        "adoption": adoption,
        "interaction_matrix": matrix,
    }
