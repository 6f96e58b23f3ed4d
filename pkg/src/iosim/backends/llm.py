"""Remote chat-completions backend, transcript recording and transcript replay."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import httpx

from ..domain import ActionKind
from .base import (
    AgentContext,
    AgentDecision,
    BackendError,
    BackendUnavailable,
    DiscussionContext,
    ReplyParseError,
    SubAction,
)

log = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "IOSIM_LLM_API_KEY"
_RETRY_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


def request_key(request: dict) -> str:
    blob = json.dumps(request, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class TranscriptRecorder:
    """Appends one JSON line per completed request: ``{key, request, response}``."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def record(self, request: dict, response: str) -> None:
        line = json.dumps({"key": request_key(request), "request": request, "response": response}, sort_keys=True, ensure_ascii=False)
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")


def load_transcript(path: str | Path) -> dict[str, deque]:
    served: dict[str, deque] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
            served.setdefault(entry["key"], deque()).append(entry["response"])
        except (json.JSONDecodeError, KeyError) as exc:
            raise ValueError(f"{path}:{lineno}: bad transcript line ({exc})") from exc
    return served


@dataclass
class ChatClient:
    """Minimal OpenAI-compatible ``/chat/completions`` client with bounded retries.

    Retries connection errors, timeouts and transient statuses with exponential
    backoff (``backoff``, ``2*backoff``, ...) for at most ``max_retries`` attempts.
    """

    base_url: str
    model: str
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 1.0
    max_in_flight: int = 8
    transport: Optional[httpx.BaseTransport] = None
    recorder: Optional[TranscriptRecorder] = None
    sleep: Any = time.sleep
    _client: Optional[httpx.Client] = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        self._slots = threading.BoundedSemaphore(max(1, self.max_in_flight))

    def _http(self) -> httpx.Client:
        if self._client is None:
            headers = {"Content-Type": "application/json"}
            key = os.environ.get(self.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
            self._client = httpx.Client(base_url=self.base_url.rstrip("/"), headers=headers, timeout=self.timeout, transport=self.transport)
        return self._client

    def wire_body(self, request: dict) -> dict:
        messages = [{"role": "system", "content": request["system"]}] + list(request.get("messages", []))
        body = {"model": request.get("model") or self.model, "messages": messages}
        for k in ("temperature", "top_p", "max_tokens", "seed"):
            if request.get(k) is not None:
                body[k] = request[k]
        return body

    def chat_complete(self, request: dict) -> str:
        body = self.wire_body(request)
        last: Optional[Exception] = None
        connect_failures = 0
        with self._slots:
            for attempt in range(self.max_retries):
                if attempt:
                    self.sleep(self.backoff * 2 ** (attempt - 1))
                try:
                    resp = self._http().post("/chat/completions", json=body)
                except (httpx.ConnectError, httpx.ConnectTimeout) as exc:
                    connect_failures += 1
                    last = exc
                    continue
                except httpx.HTTPError as exc:
                    last = exc
                    continue
                if resp.status_code in _RETRY_STATUS:
                    last = BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                    continue
                if resp.status_code >= 400:
                    raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                try:
                    text = resp.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise BackendError(f"unexpected completion payload: {exc}") from exc
                if not isinstance(text, str):
                    raise BackendError("completion content is not text")
                if self.recorder is not None:
                    self.recorder.record(request, text)
                return text
        if connect_failures == self.max_retries:
            raise BackendUnavailable(f"{self.base_url} unreachable after {self.max_retries} attempts: {last}")
        raise BackendError(f"request failed after {self.max_retries} attempts: {last}")

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None


class ReplayChatClient:
    """Serves recorded responses for byte-identical requests (FIFO per request key)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._served = load_transcript(path)
        self._lock = threading.Lock()

    def chat_complete(self, request: dict) -> str:
        key = request_key(request)
        with self._lock:
            queue = self._served.get(key)
            if not queue:
                raise BackendError(f"no recorded response for request {key[:12]}")
            return queue.popleft()

    def close(self) -> None:
        pass


# -- reply schema -------------------------------------------------------------------

REPLY_INSTRUCTIONS = """Reply with one JSON object and nothing else:
{"actions": [{"kind": "<post|reshare|comment|like|follow|silent>", "target_post": <post id or null>, "target_agent": <agent id or null>, "text": "<text or null>"}], "rationale": "<why you chose these actions>"}
Use at most {MAX} actions. "post" needs text; "reshare" and "like" need target_post; "comment" needs target_post and text; "follow" needs target_agent. Use [{"kind": "silent"}] to do nothing."""

_ACTION_FIELDS = {"kind", "target_post", "target_agent", "text"}


def _extract_object(raw: str) -> dict:
    text = raw.strip()
    if text.startswith("```"):
        text = text.strip("`")
        if text.lower().startswith("json"):
            text = text[4:]
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        start, end = raw.find("{"), raw.rfind("}")
        if start < 0 or end <= start:
            raise ReplyParseError("reply contains no JSON object") from None
        try:
            doc = json.loads(raw[start : end + 1])
        except json.JSONDecodeError as exc:
            raise ReplyParseError(f"malformed JSON reply: {exc}") from None
    if not isinstance(doc, dict):
        raise ReplyParseError("reply is not a JSON object")
    return doc


def _opt_int(value, name: str) -> Optional[int]:
    if value is None:
        return None
    if isinstance(value, bool):
        raise ReplyParseError(f"{name} must be an integer")
    if isinstance(value, int):
        return value
    if isinstance(value, str) and value.strip().lstrip("-").isdigit():
        return int(value.strip())
    raise ReplyParseError(f"{name} must be an integer, got {value!r}")


def parse_llm_reply(raw: str, max_actions: int = 3) -> AgentDecision:
    """Parse ``{"actions": [...], "rationale": ...}`` into a decision; reject anything else."""
    doc = _extract_object(raw)
    extra = set(doc) - {"actions", "rationale"}
    if extra:
        raise ReplyParseError(f"unknown reply fields: {sorted(extra)}")
    items = doc.get("actions")
    if not isinstance(items, list):
        raise ReplyParseError("'actions' must be a list")
    rationale = doc.get("rationale") or ""
    if not isinstance(rationale, str):
        raise ReplyParseError("'rationale' must be a string")
    actions = []
    for item in items:
        if not isinstance(item, dict):
            raise ReplyParseError("each action must be an object")
        bad = set(item) - _ACTION_FIELDS
        if bad:
            raise ReplyParseError(f"unknown action fields: {sorted(bad)}")
        try:
            kind = ActionKind(str(item.get("kind", "")).strip().lower())
        except ValueError:
            raise ReplyParseError(f"unknown action kind {item.get('kind')!r}") from None
        text = item.get("text")
        if text is not None and not isinstance(text, str):
            raise ReplyParseError("text must be a string")
        sub = SubAction(kind, _opt_int(item.get("target_post"), "target_post"), _opt_int(item.get("target_agent"), "target_agent"), text)
        if kind in (ActionKind.RESHARE, ActionKind.LIKE, ActionKind.COMMENT) and sub.target_post is None:
            raise ReplyParseError(f"{kind.value} needs target_post")
        if kind is ActionKind.FOLLOW and sub.target_agent is None:
            raise ReplyParseError("follow needs target_agent")
        if kind in (ActionKind.POST, ActionKind.COMMENT) and not (text or "").strip():
            raise ReplyParseError(f"{kind.value} needs text")
        actions.append(sub)
    n_active = sum(a.kind is not ActionKind.SILENT for a in actions)
    if n_active > max_actions:
        raise ReplyParseError(f"{n_active} non-silent actions exceed the cap of {max_actions}")
    if n_active == 0:
        return AgentDecision.silent(rationale)
    return AgentDecision(tuple(a for a in actions if a.kind is not ActionKind.SILENT), rationale)


# -- backend --------------------------------------------------------------------------


def render_user_message(ctx: AgentContext) -> str:
    parts = [f"You are {ctx.name}. This is round {ctx.iteration}."]
    if ctx.memory_digest:
        parts.append("Your recent activity and interactions:\n" + "\n".join(ctx.memory_digest))
    c = ctx.counters
    if c:
        parts.append(
            f"So far you have made {c.get('posts_made', 0)} posts; your posts received "
            f"{c.get('reshares_received', 0)} re-shares, {c.get('comments_received', 0)} comments, "
            f"{c.get('likes_received', 0)} likes; {c.get('follows_received', 0)} accounts followed you."
        )
    parts.append("Your feed:\n" + ctx.render_feed())
    kinds = sorted(k.value for k in ctx.permitted)
    parts.append("Actions available to you this round: " + ", ".join(kinds) + ".")
    parts.append(REPLY_INSTRUCTIONS.replace("{MAX}", str(ctx.max_actions)))
    return "\n\n".join(parts)


class LLMBackend:
    name = "llm"

    def __init__(
        self,
        client,
        *,
        model: str = "",
        temperature: Optional[float] = 0.7,
        top_p: Optional[float] = None,
        max_tokens: Optional[int] = 512,
        seed: Optional[int] = None,
    ):
        self.client = client
        self.model = model
        self.temperature = temperature
        self.top_p = top_p
        self.max_tokens = max_tokens
        self.seed = seed

    def _request(self, system: str, user: str) -> dict:
        return {
            "system": system,
            "messages": [{"role": "user", "content": user}],
            "model": self.model,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
            "seed": self.seed,
        }

    def decide(self, context: AgentContext, rng: random.Random) -> AgentDecision:
        raw = self.client.chat_complete(self._request(context.system_prompt, render_user_message(context)))
        return parse_llm_reply(raw, context.max_actions)

    def recommend(self, context: DiscussionContext, rng: random.Random) -> str:
        return self.client.chat_complete(self._request(context.system_prompt, context.materials_text))

    def orchestrate(self, system: str, user: str) -> str:
        return self.client.chat_complete(self._request(system, user))

    def info(self) -> dict:
        return {
            "backend": self.name,
            "model": self.model,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
            "seed": self.seed,
        }


def backend_from_params(
    params: dict,
    *,
    transcript: Optional[str | Path] = None,
    replay: Optional[str | Path] = None,
    transport: Optional[httpx.BaseTransport] = None,
) -> LLMBackend:
    """Build an LLM backend from ``SimulationConfig.backend_params``.

    With ``replay`` the backend answers only from a recorded transcript and
    never touches the network.
    """
    p = dict(params)
    model = p.get("model") or os.environ.get("IOSIM_LLM_MODEL", "")
    if replay is not None:
        client = ReplayChatClient(replay)
    else:
        base_url = p.get("base_url") or os.environ.get("IOSIM_LLM_BASE_URL")
        if not base_url:
            raise BackendUnavailable("no endpoint configured (backend_params.base_url or IOSIM_LLM_BASE_URL)")
        client = ChatClient(
            base_url=base_url,
            model=model,
            api_key_env=p.get("api_key_env", DEFAULT_API_KEY_ENV),
            timeout=float(p.get("timeout", 60.0)),
            max_retries=int(p.get("max_retries", 3)),
            backoff=float(p.get("backoff", 1.0)),
            max_in_flight=int(p.get("max_in_flight", 8)),
            transport=transport,
            recorder=TranscriptRecorder(transcript) if transcript else None,
        )
    return LLMBackend(
        client,
        model=model,
        temperature=p.get("temperature", 0.7),
        top_p=p.get("top_p"),
        max_tokens=p.get("max_tokens", 512),
        seed=p.get("seed"),
    )
