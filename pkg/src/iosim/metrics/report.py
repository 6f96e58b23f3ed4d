"""Assembly of the full H1-H5 measurement bundle for one run log.

Every leaf of the report is a *measure*: ``{"value", "subset", "absent"}``.
When a sub-metric's precondition fails the value is ``None`` and ``absent``
carries the reason; the report itself is always produced.
"""

from __future__ import annotations

import csv
import io as _io
import json
import statistics
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Optional

from ..domain import SCHEMA_VERSION, ActionKind, AgentGroup, SimulationConfig
from .diffusion import (
    adoption_curve,
    adoption_records,
    audience_counts,
    cascade_stats,
    build_cascades,
    diversity_score,
    engagement_counts,
    hashtag_prevalence,
)
from .graph import MetricError, avg_clustering, build_interaction_graph, density, intra_group_share, reciprocity
from .index import as_index
from .stats import mann_whitney_u
from .text import co_retweet_similarity, embed, group_comment_sentiment, group_content_similarity, original_posts, sentiment

GROUP_KEYS = ("io", "organic", "aligned", "not_aligned", "all")
DEFAULT_MAX_SAMPLES = 20000

# dotted paths of every headline analytics row; each must resolve to a measure
REQUIRED_METRICS = (
    "h1.density.io",
    "h1.clustering.io",
    "h1.reciprocity.io",
    "h2.content_similarity.io",
    "h2.content_similarity.organic",
    "h2.comment_sentiment.io",
    "h2.comment_sentiment.organic",
    "h3.co_retweet.io",
    "h3.co_retweet.organic",
    "h4.prevalence.original",
    "h4.prevalence.reshare",
    "h4.prevalence.comment",
    "h4.adoption_curve.aligned",
    "h4.adoption_curve.not_aligned",
    "h4.adoption_curve.all",
    "h4.lag.aligned",
    "h4.lag.not_aligned",
    "h4.exposures.aligned",
    "h4.exposures.not_aligned",
    "h5.engagement.reshares_per_io_post",
    "h5.engagement.comments_per_io_post",
    "h5.audience_diversity.io",
    "h5.cascade_size.io",
    "h5.cascade_depth.io",
    "h5.cascade_breadth.io",
)


def measure(value: Any, subset: str, absent: Optional[str] = None, **extra) -> dict:
    out = {"value": value, "subset": subset, "absent": absent}
    out.update(extra)
    return out


def absent(subset: str, reason: str) -> dict:
    return measure(None, subset, reason)


def _try(subset: str, fn: Callable[[], Any]) -> dict:
    try:
        return measure(fn(), subset)
    except MetricError as exc:
        return absent(subset, str(exc))


def is_measure(node: Any) -> bool:
    return isinstance(node, dict) and {"value", "subset", "absent"} <= set(node)


def sketch(values: Iterable[float], k: int) -> list[float]:
    """All values if there are at most ``k``; otherwise ``k`` evenly spaced order statistics."""
    xs = sorted(values)
    if len(xs) <= k:
        return xs
    return [xs[round(i * (len(xs) - 1) / (k - 1))] for i in range(k)]


def _mean(xs) -> float:
    xs = list(xs)
    if not xs:
        raise MetricError("no values")
    return sum(xs) / len(xs)


@dataclass
class MetricsReport:
    data: dict

    def to_dict(self) -> dict:
        return self.data

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=1, ensure_ascii=False, allow_nan=False) + "\n"

    def get(self, path: str) -> dict:
        node = self.data
        for part in path.split("."):
            node = node[part]
        return node

    def rows(self) -> list[dict]:
        return report_rows(self.data)

    def to_csv(self) -> str:
        buf = _io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["metric", "group", "regime", "run", "value", "absent"], lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow(row)
        return buf.getvalue()


def report_rows(data: dict) -> list[dict]:
    regime = data["meta"]["regime"]
    run = data["meta"]["run_id"]
    rows = []

    def walk(node, path):
        if is_measure(node):
            group = path[-1] if path[-1] in GROUP_KEYS else "all"
            metric = ".".join(path[:-1] if path[-1] in GROUP_KEYS else path)
            value = node["value"]
            if isinstance(value, (list, dict)):
                value = json.dumps(value, sort_keys=True)
            rows.append({"metric": metric, "group": group, "regime": regime, "run": run,
                         "value": "" if value is None else value, "absent": node["absent"] or ""})
            return
        if isinstance(node, dict):
            for key in sorted(node):
                walk(node[key], path + [key])

    for section in ("h1", "h2", "h3", "h4", "h5", "significance"):
        walk(data[section], [section])
    return rows


def compute_report(
    log,
    config: SimulationConfig,
    *,
    embedder: Callable = embed,
    scorer: Callable[[str], float] = sentiment,
    max_samples: int = DEFAULT_MAX_SAMPLES,
    run_id: Optional[str] = None,
) -> MetricsReport:
    idx = as_index(log)
    cfg = config
    tag = cfg.campaign.hashtag
    io = cfg.members(AgentGroup.IO)
    aligned = cfg.members(AgentGroup.ALIGNED)
    not_aligned = cfg.members(AgentGroup.NOT_ALIGNED)
    organic = cfg.organic()
    groups = {"io": io, "organic": organic, "aligned": aligned, "not_aligned": not_aligned}
    empty = not idx.events
    samples: dict[str, list[float]] = {}

    def guarded(subset, fn):
        if empty:
            return absent(subset, "empty log")
        return _try(subset, fn)

    # H1 ------------------------------------------------------------------
    h1_kinds = (ActionKind.RESHARE, ActionKind.COMMENT)
    g = build_interaction_graph(idx, h1_kinds, io)
    sub = "IO intra-group directed graph of reshare+comment interactions"
    share_kinds = [ActionKind.RESHARE, ActionKind.COMMENT, ActionKind.FOLLOW] + ([ActionKind.LIKE] if cfg.include_likes else [])
    h1 = {
        "density": {"io": guarded(sub, lambda: density(g))},
        "clustering": {"io": guarded(sub, lambda: avg_clustering(g))},
        "reciprocity": {"io": guarded(sub, lambda: reciprocity(g))},
        "intra_group_share": {
            k.value: {
                name: guarded(f"{k.value} events by {name} agents (self-targets excluded)",
                              lambda k=k, m=members: intra_group_share(idx, k, m))
                for name, members in (("io", io), ("aligned", aligned), ("not_aligned", not_aligned))
            }
            for k in share_kinds
        },
    }

    # H2 / H3 -------------------------------------------------------------
    posts = original_posts(idx)
    h2 = {"content_similarity": {}, "comment_sentiment": {}}
    h3 = {"co_retweet": {}}
    for name, members in groups.items():
        def sim(members=members, name=name):
            res = group_content_similarity(posts, members, embedder=embedder)
            samples[f"h2.content_similarity.{name}"] = sketch(res.pairs, max_samples)
            return res.mean

        def senti(members=members, name=name):
            res = group_comment_sentiment(idx, members, scorer)
            samples[f"h2.comment_sentiment.{name}"] = sketch(res.values, max_samples)
            return res.mean

        def coret(members=members, name=name):
            res = co_retweet_similarity(idx, members)
            samples[f"h3.co_retweet.{name}"] = sketch(res.pairs, max_samples)
            return res.mean

        h2["content_similarity"][name] = guarded(f"all pairs of original posts by {name} agents", sim)
        h2["comment_sentiment"][name] = guarded(f"comments between distinct {name} agents", senti)
        h3["co_retweet"][name] = guarded(f"tf-idf over root posts re-shared by {name} agents, all member pairs", coret)

    # H4 ------------------------------------------------------------------
    prevalence = hashtag_prevalence(idx, tag) if not empty else {}
    h4: dict[str, Any] = {"prevalence": {}}
    for name in ("original", "reshare", "comment"):
        v = prevalence.get(name)
        h4["prevalence"][name] = (
            measure(v, f"all {name} posts") if v is not None
            else absent(f"all {name} posts", "empty log" if empty else f"no {name} posts")
        )
    curve_groups = {"io": io, "aligned": aligned, "not_aligned": not_aligned, "organic": organic, "all": list(range(cfg.n_agents))}
    h4["adoption_curve"] = {
        name: measure(adoption_curve(idx, tag, members, cfg.iterations), f"cumulative unique {name} adopters per iteration")
        for name, members in curve_groups.items()
    }
    h4["adoption_fraction"] = {
        name: (measure(h4["adoption_curve"][name]["value"][-1] / len(members), f"{name} agents that adopted")
               if members else absent(f"{name} agents that adopted", "empty group"))
        for name, members in curve_groups.items()
    }
    records = adoption_records(idx, tag, organic, io, strict_exposure=cfg.strict_exposure, include_likes=cfg.include_likes)
    by_agent = {r.agent: r for r in records}
    h4["adoption_records"] = {"organic": measure([r.to_dict() for r in records], "one record per organic agent")}
    h4["lag"], h4["lag_mean"], h4["exposures"], h4["exposures_mean"] = {}, {}, {}, {}
    exposure_sub = "distinct tagged IO posts seen " + ("in-network " if cfg.strict_exposure else "") + "before adoption (adopters only)"
    for name, members in (("aligned", aligned), ("not_aligned", not_aligned), ("organic", organic)):
        lags = sorted(by_agent[a].lag for a in members if by_agent[a].lag is not None)
        exps = sorted(by_agent[a].exposures_before_adoption for a in members if by_agent[a].t_first_adoption is not None)
        samples[f"h4.lag.{name}"] = sketch(lags, max_samples)
        samples[f"h4.exposures.{name}"] = sketch(exps, max_samples)
        h4["lag"][name] = measure(lags, f"t_adopt - t_first_IO_interaction for {name} agents with both")
        h4["exposures"][name] = measure(exps, exposure_sub)
        h4["lag_mean"][name] = _try(h4["lag"][name]["subset"], lambda xs=lags: _mean(xs))
        h4["exposures_mean"][name] = _try(exposure_sub, lambda xs=exps: _mean(xs))

    # H5 ------------------------------------------------------------------
    eng_sub = "organic reshares/comments whose direct target is an IO original post"
    try:
        eng = engagement_counts(idx, io, organic)
        engagement = {
            "reshares_per_io_post": measure(eng["reshares_per_io_post"], eng_sub, n=eng["io_posts"]),
            "comments_per_io_post": measure(eng["comments_per_io_post"], eng_sub, n=eng["io_posts"]),
        }
    except MetricError as exc:
        engagement = {k: absent(eng_sub, str(exc)) for k in ("reshares_per_io_post", "comments_per_io_post")}

    per_agent, degenerate = {}, []
    for a in io:
        counts = audience_counts(idx, a, organic)
        if counts:
            per_agent[str(a)] = diversity_score(list(counts.values()))
            if len(counts) == 1:
                degenerate.append(a)
    div_sub = "1 - Gini of per-organic-agent reshare+comment counts, mean over IO agents with organic audience"
    samples["h5.audience_diversity.io"] = sorted(per_agent.values())
    audience = {
        "io": _try(div_sub, lambda: _mean(per_agent.values())),
        "per_agent": measure(per_agent, div_sub),
        "single_interactor_agents": measure(degenerate, "IO agents whose organic audience is one agent (diversity 1 by construction)"),
    }

    stats = [cascade_stats(c) for c in build_cascades(idx, io)]
    casc_sub = "cascades rooted at IO original posts (reshare+comment links)"
    h5: dict[str, Any] = {"engagement": engagement, "audience_diversity": audience}
    for field_name in ("size", "depth", "breadth"):
        vals = [getattr(s, field_name) for s in stats]
        samples[f"h5.cascade_{field_name}.io"] = sketch(vals, max_samples)
        h5[f"cascade_{field_name}"] = {"io": _try(casc_sub, lambda v=vals: _mean(v)) if vals else absent(casc_sub, "no IO original posts")}

    # significance --------------------------------------------------------
    significance = {}
    for key in ("h2.content_similarity", "h2.comment_sentiment", "h3.co_retweet"):
        a, b = samples.get(f"{key}.io"), samples.get(f"{key}.organic")
        name = key.split(".")[1] + "_io_vs_organic"
        sub = f"Mann-Whitney U, IO vs organic {key.split('.')[1]} values within this run"
        if a and b:
            r = mann_whitney_u(a, b)
            significance[name] = measure(r.p, sub, U=r.U, method=r.method, stars=r.stars(), n=r.n, m=r.m)
        else:
            significance[name] = absent(sub, "missing IO or organic sample")

    data = {
        "schema_version": SCHEMA_VERSION,
        "kind": "metrics_report",
        "meta": {
            "regime": cfg.regime.kind.value,
            "seed": cfg.seed,
            "run_id": run_id or f"{cfg.regime.kind.value}-s{cfg.seed}",
            "iterations": cfg.iterations,
            "hashtag": tag,
            "population": {"io": len(io), "aligned": len(aligned), "not_aligned": len(not_aligned)},
            "n_records": len(idx.records),
            "n_events": len(idx.events),
            "include_likes": cfg.include_likes,
            "strict_exposure": cfg.strict_exposure,
        },
        "h1": h1,
        "h2": h2,
        "h3": h3,
        "h4": h4,
        "h5": h5,
        "significance": significance,
        "samples": samples,
    }
    return MetricsReport(data)


# -- comparison across runs -------------------------------------------------------


class ReportSchemaError(ValueError):
    pass


def _scalar_rows(data: dict) -> dict[tuple[str, str], float]:
    out = {}
    for row in report_rows(data):
        if row["value"] == "" or isinstance(row["value"], str):
            continue
        if isinstance(row["value"], bool):
            continue
        out[(row["metric"], row["group"])] = float(row["value"])
    return out


def compare_reports(reports: list[dict], *, group_by: str = "regime", baseline: Optional[str] = None) -> list[dict]:
    """Per metric and regime: mean and sd across runs, plus a Mann-Whitney U test against ``baseline``.

    The test pools per-pair / per-item samples across runs where the report
    carries them, and falls back to the per-run values otherwise.
    """
    if len(reports) < 2:
        raise ValueError("compare needs at least two reports")
    versions = {r.get("schema_version") for r in reports}
    if versions != {SCHEMA_VERSION}:
        raise ReportSchemaError(f"incompatible report schema versions: {sorted(map(str, versions))}")
    if group_by != "regime":
        raise ValueError("only --group-by regime is supported")

    by_regime: dict[str, list[dict]] = {}
    for r in reports:
        by_regime.setdefault(r["meta"]["regime"], []).append(r)
    order = [k for k in ("common_goal", "teammate_awareness", "collective_decision_making") if k in by_regime]
    order += sorted(k for k in by_regime if k not in order)
    baseline = baseline or order[0]
    if baseline not in by_regime:
        raise ValueError(f"baseline regime {baseline!r} has no reports")

    scalars = {reg: [_scalar_rows(r) for r in rs] for reg, rs in by_regime.items()}
    keys = sorted({k for rows in scalars.values() for row in rows for k in row})

    def sample(reg: str, key: tuple[str, str]) -> list[float]:
        metric, group = key
        pooled: list[float] = []
        found = False
        for r in by_regime[reg]:
            s = r.get("samples", {}).get(f"{metric}.{group}")
            if s is not None:
                found = True
                pooled.extend(s)
        if found:
            return pooled
        return [row[key] for row in scalars[reg] if key in row]

    table = []
    for key in keys:
        base_sample = sample(baseline, key)
        for reg in order:
            vals = [row[key] for row in scalars[reg] if key in row]
            if not vals:
                continue
            entry = {
                "metric": key[0],
                "group": key[1],
                "regime": reg,
                "n_runs": len(vals),
                "mean": statistics.fmean(vals),
                "sd": statistics.stdev(vals) if len(vals) > 1 else 0.0,
                "baseline": baseline,
                "p": None,
                "stars": "",
            }
            other = sample(reg, key)
            if base_sample and other:
                res = mann_whitney_u(other, base_sample)
                entry["p"] = res.p
                entry["stars"] = res.stars()
                entry["U"] = res.U
            table.append(entry)
    return table


def render_comparison(table: list[dict]) -> str:
    lines = [f"{'metric':<40} {'group':<12} {'regime':<28} {'n':>3} {'mean':>10} {'sd':>10} {'p':>10}"]
    for e in table:
        p = "" if e["p"] is None else f"{e['p']:.3g}{e['stars']}"
        lines.append(f"{e['metric']:<40} {e['group']:<12} {e['regime']:<28} {e['n_runs']:>3} {e['mean']:>10.4f} {e['sd']:>10.4f} {p:>10}")
    return "\n".join(lines)
