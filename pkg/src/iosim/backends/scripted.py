"""A deterministic, parameterized stand-in for the language model.

Decisions depend only on (params, context, rng). The engine hands every call
its own substream keyed by (seed, agent, iteration), so a run is a pure
function of its config and personas.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from ..domain import CANONICAL_ORDER, ActionKind, AgentGroup, RegimeKind
from .base import AgentContext, AgentDecision, DiscussionContext, FeedItem, SubAction


@dataclass(frozen=True)
class Propensity:
    """Probability of attempting each kind in a turn where the kind is permitted."""

    post: float = 0.5
    reshare: float = 0.5
    comment: float = 0.3
    like: float = 0.4
    follow: float = 0.2

    def boosted(self, **delta: float) -> "Propensity":
        return replace(self, **{k: min(1.0, max(0.0, getattr(self, k) + v)) for k, v in delta.items()})


_KIND_FIELD = {
    ActionKind.POST: "post",
    ActionKind.RESHARE: "reshare",
    ActionKind.COMMENT: "comment",
    ActionKind.LIKE: "like",
    ActionKind.FOLLOW: "follow",
}

_IO_POSTS = (
    "{CANDIDATE} is the only one talking about real jobs for real families.",
    "Proud to stand with {CANDIDATE}. Good work deserves good pay.",
    "Factories reopening, wages rising. That is the {CANDIDATE} plan.",
    "Tired of empty promises? {CANDIDATE} has a real plan for working people.",
    "Every family deserves a secure future. {CANDIDATE} gets it.",
    "Talked to my neighbors today: everyone is excited about {CANDIDATE}.",
    "{CANDIDATE} will protect our paychecks and our towns. Spread the word!",
    "Strong jobs, strong communities. Vote {CANDIDATE}.",
)
_ORGANIC_POSTS = (
    "Still undecided about {TOPIC}. Anyone else feel the same?",
    "Gas prices are up again and nobody in power seems to care.",
    "Watched the debate highlights. Lots of talk, not much substance.",
    "Voting early this year. Make sure you are registered!",
    "My town needs better roads more than it needs more ads.",
    "Healthcare costs keep going up. Who is actually going to fix it?",
    "Good conversation at the diner today about {TOPIC}.",
    "Whatever happens, please be kind to your neighbors this season.",
)
_SUPPORTIVE = (
    "Great point, totally agree!",
    "Exactly right. More people need to hear this.",
    "Love this, thank you for sharing.",
    "So true. Proud to support this.",
    "This is the honest truth, well said.",
)
_CRITICAL = (
    "Not convinced. Sounds like the usual empty promises.",
    "This is misleading and you know it.",
    "Wrong. The numbers do not support this at all.",
    "Another fake talking point. Disappointing.",
    "I disagree, this ignores the real problems.",
)
_NEUTRAL = (
    "Interesting, I had not thought about it that way.",
    "Hmm, can you share a source for this?",
    "Fair enough, let us see what happens.",
)

# (theme, interchangeable phrasings); phrasings of one theme stay above 0.6 Jaccard
_RECOMMENDATIONS = (
    ("amplify", ("Amplify each other's posts by re-sharing teammates quickly",
                 "Amplify each other's posts by re-sharing teammates immediately")),
    ("hashtag", ("Use the campaign hashtag and key phrases in every post",
                 "Use the campaign hashtag and key phrases in all posts")),
    ("engage", ("Engage organic users with supportive comments on their posts",
                "Engage organic users with friendly comments on their posts")),
    ("follow", ("Follow active organic users to grow our network reach",
                "Follow active organic users to expand our network reach")),
    ("consistency", ("Keep message consistency around jobs and the economy",
                     "Keep message consistency around jobs and wages")),
    ("timing", ("Coordinate posting times so our messages appear together",
                "Coordinate posting times so our messages show up together")),
    ("counter", ("Counter critical comments with positive personal stories",
                 "Counter critical comments with positive personal experiences")),
)
_THEME_WEIGHTS = {"amplify": 5, "hashtag": 5, "engage": 4, "follow": 2, "consistency": 3, "timing": 2, "counter": 1}


@dataclass(frozen=True)
class ScriptedPolicyParams:
    propensity: dict = field(
        default_factory=lambda: {
            AgentGroup.IO: Propensity(post=0.7, reshare=0.7, comment=0.4, like=0.5, follow=0.3),
            AgentGroup.ALIGNED: Propensity(post=0.4, reshare=0.5, comment=0.3, like=0.5, follow=0.2),
            AgentGroup.NOT_ALIGNED: Propensity(post=0.4, reshare=0.35, comment=0.3, like=0.3, follow=0.15),
        }
    )
    w_team: float = 0.0  # IO targets: teammate weight 1, everyone else 1 - w_team
    hashtag_prob: float = 0.8  # IO original posts carrying the campaign hashtag
    # organic adoption: feed exposures to a hashtag before the agent starts using it
    adoption_threshold: dict = field(default_factory=lambda: {AgentGroup.ALIGNED: 20, AgentGroup.NOT_ALIGNED: 250})
    # multiplier on the target weight of posts carrying the campaign / adopted hashtag
    tag_affinity: dict = field(
        default_factory=lambda: {AgentGroup.IO: 1.5, AgentGroup.ALIGNED: 2.0, AgentGroup.NOT_ALIGNED: 0.5}
    )
    io_posts: tuple[str, ...] = _IO_POSTS
    organic_posts: tuple[str, ...] = _ORGANIC_POSTS
    supportive: tuple[str, ...] = _SUPPORTIVE
    critical: tuple[str, ...] = _CRITICAL
    neutral: tuple[str, ...] = _NEUTRAL
    strategy_boost: float = 0.15

    def __post_init__(self) -> None:
        probs = [self.w_team, self.hashtag_prob, self.strategy_boost]
        for p in self.propensity.values():
            probs += [p.post, p.reshare, p.comment, p.like, p.follow]
        if any(not 0.0 <= x <= 1.0 for x in probs):
            raise ValueError("scripted policy probabilities must lie in [0, 1]")
        if any(v < 0 for v in self.tag_affinity.values()) or any(v < 0 for v in self.adoption_threshold.values()):
            raise ValueError("affinities and thresholds must be non-negative")


def default_policy_params(regime: RegimeKind | str = RegimeKind.COMMON_GOAL) -> ScriptedPolicyParams:
    """Shipped defaults: no team bias under Common Goal, w_team = 0.8 once teammates are known."""
    kind = RegimeKind(regime)
    return ScriptedPolicyParams(w_team=0.0 if kind is RegimeKind.COMMON_GOAL else 0.8)


def _adopted_tags(params: ScriptedPolicyParams, ctx: AgentContext) -> list[str]:
    threshold = params.adoption_threshold.get(ctx.group)
    if threshold is None:
        return []
    return sorted(t for t, n in ctx.tag_exposures.items() if n >= threshold)


def _fill(template: str, ctx: AgentContext) -> str:
    camp = ctx.campaign
    return template.format(
        CANDIDATE=camp.candidate if camp else "the candidate",
        TOPIC=camp.topic if camp else "the election",
    )


def _pick_target(
    items: Sequence[FeedItem], weights: Sequence[float], rng: random.Random
) -> Optional[FeedItem]:
    total = sum(weights)
    if not items or total <= 0:
        return None
    x = rng.random() * total
    for item, w in zip(items, weights):
        x -= w
        if x < 0:
            return item
    return items[-1]


def target_weights(params: ScriptedPolicyParams, ctx: AgentContext, favored_tags: Optional[set[str]], w_team: float) -> list[float]:
    """Weight of each feed item as a re-share/comment/like target.

    Posts carrying one of ``favored_tags`` (any hashtag when ``None``) get the
    group's tag affinity as a multiplier.
    """
    team = ctx.teammates
    affinity = params.tag_affinity.get(ctx.group, 1.0)
    out = []
    for item in ctx.feed:
        w = 1.0
        if team:
            w = 1.0 if item.author in team else 1.0 - w_team
        if (favored_tags.intersection(item.hashtags) if favored_tags is not None else item.hashtags):
            w *= affinity
        out.append(w)
    return out


def _strategy_effects(params: ScriptedPolicyParams, ctx: AgentContext) -> tuple[dict, float, float]:
    """Propensity deltas, hashtag-probability delta and w_team floor implied by the current strategy."""
    if ctx.strategy is None or not ctx.strategy.items:
        return {}, 0.0, 0.0
    text = " ".join(i.description.lower() for i in ctx.strategy.items)
    b = params.strategy_boost
    delta: dict = {}
    if "amplif" in text or "re-shar" in text or "reshar" in text:
        delta["reshare"] = b
    if "comment" in text or "engage" in text:
        delta["comment"] = b
    if "follow" in text:
        delta["follow"] = b
    tag_delta = b if "hashtag" in text or "key phrase" in text else 0.0
    team_floor = 0.8 if "each other" in text or "teammate" in text else 0.0
    return delta, tag_delta, team_floor


def scripted_decide(params: ScriptedPolicyParams, ctx: AgentContext, rng: random.Random) -> AgentDecision:
    is_io = ctx.group is AgentGroup.IO
    prop = params.propensity[ctx.group]
    tag_prob = params.hashtag_prob
    w_team = params.w_team
    if is_io:
        delta, tag_delta, team_floor = _strategy_effects(params, ctx)
        prop = prop.boosted(**delta)
        tag_prob = min(1.0, tag_prob + tag_delta)
        w_team = max(w_team, team_floor)

    # organic agents do not know the campaign; hashtagged content stands in for it
    favored = {ctx.campaign.hashtag} if ctx.campaign is not None else None
    adopted = _adopted_tags(params, ctx)
    weights = target_weights(params, ctx, favored, w_team)

    actions: list[SubAction] = []
    reasons: list[str] = []
    for kind in sorted(ctx.permitted - {ActionKind.SILENT}, key=CANONICAL_ORDER.get):
        # one draw per permitted kind keeps the stream layout fixed
        if rng.random() >= getattr(prop, _KIND_FIELD[kind]):
            continue
        if kind is ActionKind.POST:
            if is_io:
                text = _fill(rng.choice(params.io_posts), ctx)
                if ctx.campaign is not None and rng.random() < tag_prob:
                    text += " " + ctx.campaign.hashtag
            else:
                text = _fill(rng.choice(params.organic_posts), ctx)
                if adopted:
                    text += " " + " ".join(adopted)
            actions.append(SubAction(kind, text=text))
            reasons.append("sharing my view")
            continue
        if kind is ActionKind.FOLLOW:
            candidates = sorted({i.author for i in ctx.feed} - ctx.following - {ctx.agent})
            if not candidates:
                continue
            team = ctx.teammates
            fw = [1.0 if not team or a in team else 1.0 - w_team for a in candidates]
            total = sum(fw)
            if total <= 0:
                continue
            x = rng.random() * total
            chosen = candidates[-1]
            for a, w in zip(candidates, fw):
                x -= w
                if x < 0:
                    chosen = a
                    break
            actions.append(SubAction(kind, target_agent=chosen))
            reasons.append("this account posts things I care about")
            continue
        target = _pick_target(ctx.feed, weights, rng)
        if target is None:
            continue
        if kind is ActionKind.COMMENT:
            tagged = bool(favored.intersection(target.hashtags) if favored is not None else target.hashtags)
            friendly = (is_io and (target.author in ctx.teammates or tagged)) or (ctx.group is AgentGroup.ALIGNED and tagged)
            hostile = ctx.group is AgentGroup.NOT_ALIGNED and tagged
            pool = params.supportive if friendly else params.critical if hostile else params.neutral
            actions.append(SubAction(kind, target_post=target.post_id, text=rng.choice(pool)))
            reasons.append(f"I want to respond to post {target.post_id}")
        else:
            actions.append(SubAction(kind, target_post=target.post_id))
            reasons.append(f"I want to {'re-share' if kind is ActionKind.RESHARE else 'like'} post {target.post_id}")

    actions = actions[: ctx.max_actions]
    if not actions:
        return AgentDecision.silent("nothing worth acting on")
    return AgentDecision(tuple(actions), "; ".join(reasons[: len(actions)]))


def scripted_recommend(ctx: DiscussionContext, rng: random.Random) -> str:
    """Three distinct numbered recommendations drawn from a fixed pool."""
    themes = list(_RECOMMENDATIONS)
    chosen = []
    for _ in range(3):
        weights = [_THEME_WEIGHTS[t] for t, _ in themes]
        x = rng.random() * sum(weights)
        for i, w in enumerate(weights):
            x -= w
            if x < 0:
                break
        chosen.append(themes.pop(i))
    return "\n".join(f"{n}. {rng.choice(phrasings)}" for n, (_, phrasings) in enumerate(chosen, 1))


class ScriptedBackend:
    name = "scripted"

    def __init__(self, params: Optional[ScriptedPolicyParams] = None, *, regime: RegimeKind | str | None = None):
        if params is None:
            params = default_policy_params(regime or RegimeKind.COMMON_GOAL)
        self.params = params

    def decide(self, context: AgentContext, rng: random.Random) -> AgentDecision:
        return scripted_decide(self.params, context, rng)

    def recommend(self, context: DiscussionContext, rng: random.Random) -> str:
        return scripted_recommend(context, rng)

    def info(self) -> dict:
        return {"backend": self.name, "w_team": self.params.w_team, "hashtag_prob": self.params.hashtag_prob}
