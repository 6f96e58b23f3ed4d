import json
import os

import httpx
import pytest

from iosim.backends.base import BackendError, BackendUnavailable, ReplyParseError
from iosim.backends.llm import (
    ChatClient,
    LLMBackend,
    ReplayChatClient,
    TranscriptRecorder,
    backend_from_params,
    parse_llm_reply,
    request_key,
)
from iosim.cli import main
from iosim.domain import ActionKind

REQ = {"system": "sys", "messages": [{"role": "user", "content": "hi"}], "model": "m", "temperature": 0.3, "top_p": None, "max_tokens": 64, "seed": 5}


def reply(content):
    return httpx.Response(200, json={"choices": [{"message": {"content": content}}]})


def test_parse_valid_reply():
    d = parse_llm_reply('{"actions": [{"kind": "reshare", "target_post": 4}, {"kind": "post", "text": "hi"}], "rationale": "r"}')
    assert [a.kind for a in d.actions] == [ActionKind.RESHARE, ActionKind.POST]
    assert d.rationale == "r"


def test_parse_fenced_and_embedded():
    assert parse_llm_reply('```json\n{"actions": [{"kind": "like", "target_post": "7"}]}\n```').actions[0].target_post == 7
    assert parse_llm_reply('Sure! {"actions": [{"kind": "silent"}]} done').is_silent


@pytest.mark.parametrize(
    "raw",
    [
        "no json here",
        '{"actions": [{"kind": "dance"}]}',
        '{"actions": [{"kind": "reshare"}]}',
        '{"actions": [{"kind": "follow"}]}',
        '{"actions": [{"kind": "comment", "target_post": 1}]}',
        '{"actions": [], "mood": "x"}',
        '{"actions": [{"kind": "like", "target_post": 1, "extra": 1}]}',
        '{"actions": "post"}',
    ],
)
def test_parse_rejects(raw):
    with pytest.raises(ReplyParseError):
        parse_llm_reply(raw)


def test_parse_over_arity():
    acts = [{"kind": "like", "target_post": i} for i in range(4)]
    with pytest.raises(ReplyParseError):
        parse_llm_reply(json.dumps({"actions": acts}), max_actions=3)
    assert len(parse_llm_reply(json.dumps({"actions": acts}), max_actions=4).actions) == 4


def test_empty_actions_is_silent():
    assert parse_llm_reply('{"actions": []}').is_silent


def test_wire_body_passes_decoding_params():
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        return reply("ok")

    client = ChatClient("http://x/v1", "default-model", transport=httpx.MockTransport(handler))
    assert client.chat_complete(REQ) == "ok"
    body = seen[0]
    assert body["model"] == "m" and body["temperature"] == 0.3 and body["max_tokens"] == 64 and body["seed"] == 5
    assert "top_p" not in body
    assert body["messages"][0] == {"role": "system", "content": "sys"}


def test_api_key_header(monkeypatch):
    monkeypatch.setenv("IOSIM_LLM_API_KEY", "secret")
    seen = []

    def handler(request):
        seen.append(request.headers.get("authorization"))
        return reply("ok")

    ChatClient("http://x", "m", transport=httpx.MockTransport(handler)).chat_complete(REQ)
    assert seen == ["Bearer secret"]


def test_retries_with_backoff():
    calls, sleeps = [], []

    def handler(request):
        calls.append(1)
        return httpx.Response(503, text="busy") if len(calls) < 3 else reply("fine")

    client = ChatClient("http://x", "m", transport=httpx.MockTransport(handler), sleep=sleeps.append, backoff=0.5)
    assert client.chat_complete(REQ) == "fine"
    assert sleeps == [0.5, 1.0]


def test_gives_up_after_max_retries():
    def handler(request):
        return httpx.Response(500)

    client = ChatClient("http://x", "m", transport=httpx.MockTransport(handler), sleep=lambda s: None, max_retries=2)
    with pytest.raises(BackendError) as err:
        client.chat_complete(REQ)
    assert not isinstance(err.value, BackendUnavailable)


def test_client_error_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(401)

    with pytest.raises(BackendError):
        ChatClient("http://x", "m", transport=httpx.MockTransport(handler), sleep=lambda s: None).chat_complete(REQ)
    assert len(calls) == 1


def test_unreachable_is_unavailable():
    def handler(request):
        raise httpx.ConnectError("refused")

    client = ChatClient("http://x", "m", transport=httpx.MockTransport(handler), sleep=lambda s: None)
    with pytest.raises(BackendUnavailable):
        client.chat_complete(REQ)


def test_record_and_replay(tmp_path):
    path = tmp_path / "t.jsonl"
    answers = iter(["first", "second"])
    client = ChatClient("http://x", "m", transport=httpx.MockTransport(lambda r: reply(next(answers))), recorder=TranscriptRecorder(path))
    assert client.chat_complete(REQ) == "first"
    assert client.chat_complete(REQ) == "second"
    entries = [json.loads(l) for l in path.read_text().splitlines()]
    assert entries[0]["key"] == request_key(REQ)
    rep = ReplayChatClient(path)
    assert rep.chat_complete(REQ) == "first"
    assert rep.chat_complete(REQ) == "second"
    with pytest.raises(BackendError):
        rep.chat_complete(REQ)
    with pytest.raises(BackendError):
        ReplayChatClient(path).chat_complete(dict(REQ, seed=6))


def test_backend_from_params_requires_endpoint(monkeypatch):
    monkeypatch.delenv("IOSIM_LLM_BASE_URL", raising=False)
    with pytest.raises(BackendUnavailable):
        backend_from_params({})


def test_backend_info_records_decoding():
    b = LLMBackend(None, model="m", temperature=0.2, seed=3)
    assert b.info() == {"backend": "llm", "model": "m", "temperature": 0.2, "top_p": None, "max_tokens": 512, "seed": 3}


def _llm_config(path, base_url, regime="teammate_awareness"):
    cfg = {"n_io": 4, "n_aligned": 3, "n_not_aligned": 3, "iterations": 5, "seed": 11, "feed_size": 10,
           "regime": {"kind": regime}, "backend": "llm", "backend_params": {"base_url": base_url, "model": "stub", "backoff": 0.01}}
    path.write_text(json.dumps(cfg))
    return path


def test_stub_endpoint_run_records_and_replays(tmp_path, chat_server):
    url = f"http://127.0.0.1:{chat_server.server_address[1]}/v1"
    cfg = _llm_config(tmp_path / "cfg.json", url, "collective_decision_making")
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    transcript = (out / "transcript.jsonl").read_text().splitlines()
    assert len(transcript) == len(chat_server.requests) > 0
    assert all(r["body"]["model"] == "stub" and r["body"]["temperature"] == 0.7 for r in chat_server.requests)
    log = (out / "events.jsonl").read_text()
    assert '"kind":"reshare"' in log.replace(" ", "") or '"kind":"post"' in log.replace(" ", "")
    n = len(chat_server.requests)
    assert main(["replay", "--log", str(out / "events.jsonl"), "--verify"]) == 0
    assert len(chat_server.requests) == n  # replay never touches the network


def test_unreachable_endpoint_exit_code(tmp_path):
    cfg = _llm_config(tmp_path / "cfg.json", "http://127.0.0.1:9/v1")
    data = json.loads(cfg.read_text())
    data["backend_params"]["max_retries"] = 1
    cfg.write_text(json.dumps(data))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 3
    assert (tmp_path / "run" / "events.jsonl").exists()


@pytest.mark.live
@pytest.mark.skipif(not os.environ.get("IOSIM_LLM_BASE_URL"), reason="IOSIM_LLM_BASE_URL not set")
def test_live_endpoint_smoke(tmp_path):
    cfg = {"n_io": 4, "n_aligned": 3, "n_not_aligned": 3, "iterations": 5, "seed": 1, "backend": "llm"}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(tmp_path / "cfg.json"), "--out", str(out)]) == 0
    assert (out / "transcript.jsonl").stat().st_size > 0
    assert main(["replay", "--log", str(out / "events.jsonl"), "--verify"]) == 0
