from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from iosim.domain import ActionEvent, ActionKind, SimulationConfig


class LogBuilder:
    """Builds hand-written logs with automatic post ids."""

    def __init__(self):
        self.records = []
        self.next_id = 0

    def _pid(self):
        pid = self.next_id
        self.next_id += 1
        return pid

    def post(self, t, actor, text="hello"):
        pid = self._pid()
        from iosim.domain import extract_hashtags

        self.records.append(ActionEvent(t, actor, ActionKind.POST, post_id=pid, text=text, hashtags=tuple(extract_hashtags(text))))
        return pid

    def reshare(self, t, actor, target, text=None):
        from iosim.domain import extract_hashtags

        src = next((r for r in self.records if getattr(r, "post_id", None) == target), None)
        text = text if text is not None else (src.text if src is not None else "shared")
        pid = self._pid()
        author = src.actor if src is not None else None
        self.records.append(ActionEvent(t, actor, ActionKind.RESHARE, post_id=pid, target_post=target, target_agent=author,
                                        text=text, hashtags=tuple(extract_hashtags(text))))
        return pid

    def comment(self, t, actor, target, text="nice"):
        from iosim.domain import extract_hashtags

        src = next((r for r in self.records if getattr(r, "post_id", None) == target), None)
        pid = self._pid()
        self.records.append(ActionEvent(t, actor, ActionKind.COMMENT, post_id=pid, target_post=target,
                                        target_agent=src.actor if src is not None else None,
                                        text=text, hashtags=tuple(extract_hashtags(text))))
        return pid

    def like(self, t, actor, target):
        src = next((r for r in self.records if getattr(r, "post_id", None) == target), None)
        self.records.append(ActionEvent(t, actor, ActionKind.LIKE, target_post=target, target_agent=src.actor if src else None))

    def follow(self, t, actor, target):
        self.records.append(ActionEvent(t, actor, ActionKind.FOLLOW, target_agent=target))

    def silent(self, t, actor):
        self.records.append(ActionEvent(t, actor, ActionKind.SILENT))

    def sorted(self):
        return sorted(self.records, key=lambda r: r.sort_key)


@pytest.fixture
def builder():
    return LogBuilder()


@pytest.fixture
def small_config():
    return SimulationConfig(n_io=3, n_aligned=3, n_not_aligned=3, iterations=6, seed=7, feed_size=20)


def write_config(path, **kw):
    path.write_text(json.dumps(kw), encoding="utf-8")
    return path


class StubChatHandler(BaseHTTPRequestHandler):
    """OpenAI-compatible stub: replies with a deterministic function of the request body."""

    def log_message(self, *args):
        pass

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        self.server.requests.append({"path": self.path, "body": body, "headers": dict(self.headers)})
        user = body["messages"][-1]["content"]
        system = body["messages"][0]["content"]
        if "Provide exactly three points" in user:
            content = "1. Amplify each other's posts\n2. Use the hashtag in every post\n3. Engage organic users"
        elif "IO Orchestrator" in system:
            content = "1. Amplify each other's posts (3 agents)\n2. Use the hashtag (2 agents)"
        else:
            import re

            ids = re.findall(r"\[post (\d+)\]", user)
            if ids and "reshare" in user.split("Actions available to you this round:")[-1].split(".")[0]:
                content = json.dumps({"actions": [{"kind": "reshare", "target_post": int(ids[0])}], "rationale": "worth spreading"})
            elif "post" in user.split("Actions available to you this round:")[-1].split(".")[0].split(", "):
                content = json.dumps({"actions": [{"kind": "post", "text": "Jobs matter #jobsfirst"}], "rationale": "my view"})
            else:
                content = json.dumps({"actions": [{"kind": "silent"}], "rationale": "observing"})
        payload = json.dumps({"choices": [{"message": {"role": "assistant", "content": content}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)


@pytest.fixture
def chat_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), StubChatHandler)
    server.requests = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server
    finally:
        server.shutdown()
        server.server_close()
