import random
from collections import Counter
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iosim.backends.base import AgentDecision, BackendError, BackendUnavailable, SubAction
from iosim.backends.scripted import ScriptedBackend
from iosim.domain import ActionEvent, ActionKind, AgentGroup, MetaEvent, SimulationConfig
from iosim.engine import (
    AgentMemory,
    _new_post,
    apply_decision,
    build_feed,
    gate_actions,
    init_simulation,
    run_iteration,
    run_simulation,
    update_memory,
)
from iosim.rng import substream
from iosim.store import log_digest


class Silent:
    name = "silent"

    def decide(self, ctx, rng):
        return AgentDecision.silent()

    def recommend(self, ctx, rng):
        return "1. a\n2. b\n3. c"


class Failing(Silent):
    def __init__(self, exc=BackendError, bad_agents=None):
        self.exc = exc
        self.bad = bad_agents

    def decide(self, ctx, rng):
        if self.bad is None or ctx.agent in self.bad:
            raise self.exc("down")
        return AgentDecision((SubAction(ActionKind.POST, text="still here"),))


def test_init_counts_and_determinism():
    cfg = SimulationConfig()
    s1, s2 = init_simulation(cfg), init_simulation(cfg)
    groups = Counter(a.group for a in s1.agents)
    assert groups == {AgentGroup.IO: 10, AgentGroup.ALIGNED: 20, AgentGroup.NOT_ALIGNED: 20}
    assert s1.snapshot_digest() == s2.snapshot_digest()
    tiny = init_simulation(SimulationConfig(n_io=1, n_aligned=1, n_not_aligned=0))
    assert len(tiny.agents) == 2


def _state_with_posts(feed_size=4, n_agents=6):
    cfg = SimulationConfig(n_io=2, n_aligned=2, n_not_aligned=n_agents - 4, iterations=20, feed_size=feed_size)
    return init_simulation(cfg)


def test_feed_empty_store():
    state = _state_with_posts()
    assert build_feed(state, 0).entries == ()


def test_feed_follows_nobody_all_out_of_network():
    state = _state_with_posts(feed_size=10)
    for k in range(8):
        _new_post(state, 1 + k % 5, f"p{k}", ActionKind.POST, None)
    feed = build_feed(state, 0)
    assert feed.n_in_network == 0 and len(feed.entries) == 8


def test_feed_r4_recency_then_random():
    state = _state_with_posts(feed_size=4)
    author = 1
    for t in range(10):
        state.iteration = t
        _new_post(state, author, f"a{t}", ActionKind.POST, None)
        _new_post(state, 2 + t % 3, f"o{t}", ActionKind.POST, None)
    _new_post(state, 0, "mine", ActionKind.POST, None)
    state.agents[0].following.add(author)
    feed = build_feed(state, 0, random.Random(1))
    own = [p for p in state.posts_by_author[author]]
    assert feed.post_ids[:2] == [own[-1], own[-2]]
    assert feed.n_in_network == 2 and len(feed.entries) == 4
    assert all(state.posts[p].author not in (0, author) for p in feed.post_ids[2:])


def test_feed_spills_unused_quota():
    state = _state_with_posts(feed_size=6)
    _new_post(state, 1, "only one", ActionKind.POST, None)
    for k in range(10):
        _new_post(state, 2 + k % 3, f"x{k}", ActionKind.POST, None)
    state.agents[0].following.add(1)
    feed = build_feed(state, 0)
    assert feed.n_in_network == 1 and len(feed.entries) == 6


def test_gate_thresholds():
    rng = random.Random(0)
    assert gate_actions(rng, 1.0) == frozenset(ActionKind)
    assert gate_actions(rng, 0.0) == {ActionKind.SILENT}
    a = gate_actions(substream(3, "gate", 1, 2), 0.5)
    b = gate_actions(substream(3, "gate", 1, 2), 0.5)
    assert a == b


def test_apply_silent_and_reshare_and_follow():
    state = _state_with_posts()
    (ev,) = apply_decision(state, 0, AgentDecision.silent())
    assert ev.kind is ActionKind.SILENT and not state.posts
    (post_ev,) = apply_decision(state, 1, AgentDecision((SubAction(ActionKind.POST, text="hello #Tag"),)))
    assert post_ev.hashtags == ("#tag",)
    (rs,) = apply_decision(state, 2, AgentDecision((SubAction(ActionKind.RESHARE, target_post=post_ev.post_id),)))
    assert state.posts[post_ev.post_id].reshares == 1
    assert state.posts[rs.post_id].parent == post_ev.post_id and rs.target_agent == 1
    assert state.agents[1].memory.reshares_received == 1
    follow = AgentDecision((SubAction(ActionKind.FOLLOW, target_agent=1),))
    assert len(apply_decision(state, 2, follow)) == 1
    assert apply_decision(state, 2, follow) == []


def test_apply_drops_invalid_subactions():
    state = _state_with_posts()
    dec = AgentDecision((SubAction(ActionKind.LIKE, target_post=42), SubAction(ActionKind.POST, text="ok")))
    events = apply_decision(state, 0, dec)
    assert [e.kind for e in events] == [ActionKind.POST]
    events = apply_decision(state, 0, AgentDecision((SubAction(ActionKind.POST, text="x"),)), frozenset({ActionKind.SILENT}))
    assert events == []


def test_update_memory():
    mem = AgentMemory(0, capacity=2)
    update_memory(mem, [])
    assert not mem.events
    evs = [ActionEvent(t, 1, ActionKind.SILENT) for t in range(3)]
    update_memory(mem, evs)
    assert list(mem.events) == evs[1:]
    update_memory(mem, [ActionEvent(4, 1, ActionKind.RESHARE, post_id=5, target_post=1, target_agent=0, text="x")])
    assert mem.reshares_received == 1


def test_all_silent_backend_gives_n_silent_events():
    state = _state_with_posts()
    _, records = run_iteration(state, Silent())
    events = [r for r in records if isinstance(r, ActionEvent)]
    assert len(events) == 6 and all(e.kind is ActionKind.SILENT for e in events)
    assert sum(isinstance(r, MetaEvent) for r in records) == 6


def test_backend_failure_makes_agent_silent():
    state = _state_with_posts()
    _, records = run_iteration(state, Failing(BackendError, bad_agents={1}))
    events = {e.actor: e for e in records if isinstance(e, ActionEvent)}
    assert events[1].kind is ActionKind.SILENT and events[0].kind is ActionKind.POST


def test_backend_unreachable_for_everyone_aborts(tmp_path):
    cfg = SimulationConfig(n_io=1, n_aligned=1, n_not_aligned=1, iterations=3)
    with pytest.raises(BackendUnavailable):
        run_simulation(cfg, None, Failing(BackendUnavailable), out_dir=tmp_path)
    import json

    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "aborted"


def test_over_arity_decision_is_silenced():
    class Greedy(Silent):
        def decide(self, ctx, rng):
            return AgentDecision(tuple(SubAction(ActionKind.POST, text=f"p{k}") for k in range(5)))

    state = _state_with_posts()
    _, records = run_iteration(state, Greedy())
    assert all(e.kind is ActionKind.SILENT for e in records if isinstance(e, ActionEvent))


def test_desk_run_shape_and_determinism():
    cfg = SimulationConfig(seed=42)
    _, log1 = run_simulation(cfg, None, ScriptedBackend())
    _, log2 = run_simulation(cfg, None, ScriptedBackend())
    assert log_digest(log1) == log_digest(log2)
    feeds = [r for r in log1 if isinstance(r, MetaEvent) and r.meta == "feed"]
    assert len(feeds) == 2500
    turns = {(e.iteration, e.actor) for e in log1 if isinstance(e, ActionEvent)}
    assert len(turns) == 2500


def test_concurrency_does_not_change_the_log():
    cfg = SimulationConfig(n_io=3, n_aligned=3, n_not_aligned=3, iterations=10, seed=5, feed_size=20)
    _, serial = run_simulation(cfg, None, ScriptedBackend())
    _, parallel = run_simulation(replace(cfg, max_concurrency=4), None, ScriptedBackend())
    assert log_digest(serial) == log_digest(parallel)


def test_empty_run(tmp_path):
    manifest, log = run_simulation(SimulationConfig(iterations=0), None, ScriptedBackend(), out_dir=tmp_path)
    assert log == [] and (tmp_path / "events.jsonl").read_text() == "" and manifest.status == "complete"


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32), st.integers(2, 5), st.integers(0, 3), st.integers(2, 30), st.floats(0, 1))
def test_run_invariants(seed, n_io, n_org, feed_size, fraction):
    cfg = SimulationConfig(n_io=n_io, n_aligned=n_org, n_not_aligned=n_org, iterations=6, seed=seed,
                           feed_size=feed_size, in_network_fraction=fraction, activation_threshold=0.8)
    state = init_simulation(cfg)
    backend = ScriptedBackend()
    while state.iteration < cfg.iterations:
        following = {a.agent_id: set(a.following) for a in state.agents}
        _, records = run_iteration(state, backend)
        for r in records:
            if isinstance(r, MetaEvent) and r.meta == "feed":
                ids = r.payload["post_ids"]
                assert len(ids) == len(set(ids)) <= feed_size
                assert r.payload["n_in_network"] <= cfg.in_network_quota
                assert all(state.posts[p].author != r.actor for p in ids)
                assert all(state.posts[p].author in following[r.actor] for p in ids[: r.payload["n_in_network"]])
    log = state.log
    # canonical ordering is the identity
    assert sorted(log, key=lambda r: r.sort_key) == log
    # counters equal recomputation from the log
    counts = Counter((e.kind, e.target_post) for e in log if isinstance(e, ActionEvent) and e.target_post is not None)
    for p in state.posts.values():
        assert p.reshares == counts[(ActionKind.RESHARE, p.post_id)]
        assert p.comments == counts[(ActionKind.COMMENT, p.post_id)]
        assert p.likes == counts[(ActionKind.LIKE, p.post_id)]
    for a in state.agents:
        received = Counter(e.kind for e in log if isinstance(e, ActionEvent) and e.target_agent == a.agent_id and e.actor != a.agent_id)
        assert a.memory.reshares_received == received[ActionKind.RESHARE]
        assert a.memory.follows_received == received[ActionKind.FOLLOW]
