"""Text-derived coordination measures: content similarity, comment sentiment, co-retweet similarity.

The default embedder and sentiment scorer are deterministic stand-ins (feature
hashing and a word lexicon). Any callable with the same signature can be
plugged in instead, e.g. a sentence-embedding service.
"""

from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..domain import ActionKind
from .graph import MetricError
from .index import as_index

DEFAULT_DIM = 256
_TOKEN = re.compile(r"\w+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


@lru_cache(maxsize=65536)
def _bucket(token: str, dim: int) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "big") % dim


def embed(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Feature-hashed bag of words, L2-normalized (zero vector for token-free text)."""
    v = np.zeros(dim)
    for tok in tokenize(text or ""):
        v[_bucket(tok, dim)] += 1.0
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def sparse_cosine(u: dict, v: dict) -> float:
    if len(u) > len(v):
        u, v = v, u
    dot = sum(w * v.get(k, 0.0) for k, w in u.items())
    nu = math.sqrt(sum(w * w for w in u.values()))
    nv = math.sqrt(sum(w * w for w in v.values()))
    if nu == 0 or nv == 0:
        return 0.0
    return max(-1.0, min(1.0, dot / (nu * nv)))


@dataclass(frozen=True)
class PairSimilarity:
    mean: float
    pairs: tuple[float, ...]


def group_content_similarity(
    posts: Sequence[tuple[int, str]],
    members: Iterable[int],
    *,
    cross_author_only: bool = False,
    embedder: Callable[[str], np.ndarray] = embed,
) -> PairSimilarity:
    """Mean cosine over all unordered pairs of the members' posts."""
    member_set = set(members)
    chosen = [(a, t) for a, t in posts if a in member_set]
    if len(chosen) < 2:
        raise MetricError("content similarity needs at least 2 posts")
    mat = np.vstack([embedder(t) for _, t in chosen])
    norms = np.linalg.norm(mat, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = mat / safe[:, None]
    sims = np.clip(unit @ unit.T, -1.0, 1.0)
    iu, ju = np.triu_indices(len(chosen), k=1)
    if cross_author_only:
        authors = np.array([a for a, _ in chosen])
        keep = authors[iu] != authors[ju]
        iu, ju = iu[keep], ju[keep]
    if len(iu) == 0:
        raise MetricError("no qualifying post pairs")
    values = sims[iu, ju]
    return PairSimilarity(float(values.mean()), tuple(float(x) for x in values))


def original_posts(log) -> list[tuple[int, str]]:
    idx = as_index(log)
    return [(e.actor, e.text or "") for e in idx.events if e.kind is ActionKind.POST]


def tfidf(docs: Sequence[Iterable]) -> list[dict]:
    """tf = raw count, idf = ln((1 + N) / (1 + df)) + 1, each document L2-normalized."""
    if not docs:
        raise MetricError("tf-idf needs at least one document")
    counts = [Counter(d) for d in docs]
    n = len(counts)
    df: Counter = Counter()
    for c in counts:
        df.update(c.keys())
    idf = {term: math.log((1 + n) / (1 + d)) + 1.0 for term, d in df.items()}
    out = []
    for c in counts:
        vec = {term: tf * idf[term] for term, tf in c.items()}
        norm = math.sqrt(sum(w * w for w in vec.values()))
        out.append({k: w / norm for k, w in vec.items()} if norm > 0 else {})
    return out


def reshare_documents(log, group: Iterable[int]) -> dict[int, Counter]:
    """Per member, the multiset of root posts it re-shared."""
    idx = as_index(log)
    docs = {a: Counter() for a in sorted(set(group))}
    for ev in idx.events:
        if ev.kind is ActionKind.RESHARE and ev.actor in docs and ev.target_post is not None:
            docs[ev.actor][idx.reshare_root(ev.target_post)] += 1
    return docs


def co_retweet_similarity(log, group: Iterable[int]) -> PairSimilarity:
    docs = reshare_documents(log, group)
    members = list(docs)
    if len(members) < 2:
        raise MetricError("co-retweet similarity needs at least 2 group members")
    vecs = tfidf([docs[a] for a in members])
    pairs = [sparse_cosine(vecs[i], vecs[j]) for i in range(len(members)) for j in range(i + 1, len(members))]
    return PairSimilarity(sum(pairs) / len(pairs), tuple(pairs))


# -- sentiment ------------------------------------------------------------------


@dataclass(frozen=True)
class Lexicon:
    positive: frozenset[str]
    negative: frozenset[str]

    @classmethod
    def from_files(cls, positive: str | Path, negative: str | Path) -> "Lexicon":
        return cls(_read_words(Path(positive).read_text(encoding="utf-8")), _read_words(Path(negative).read_text(encoding="utf-8")))


def _read_words(text: str) -> frozenset[str]:
    return frozenset(w.strip().lower() for w in text.splitlines() if w.strip() and not w.startswith("#"))


@lru_cache(maxsize=1)
def default_lexicon() -> Lexicon:
    data = resources.files("iosim") / "data"
    return Lexicon(
        _read_words((data / "positive.txt").read_text(encoding="utf-8")),
        _read_words((data / "negative.txt").read_text(encoding="utf-8")),
    )


def sentiment(text: str, lexicon: Optional[Lexicon] = None) -> float:
    """0.5 + 0.5 * (pos - neg) / (pos + neg) over lexicon hits; 0.5 when nothing matches."""
    lex = lexicon or default_lexicon()
    pos = neg = 0
    for tok in tokenize(text or ""):
        if tok in lex.positive:
            pos += 1
        elif tok in lex.negative:
            neg += 1
    if pos + neg == 0:
        return 0.5
    return 0.5 + 0.5 * (pos - neg) / (pos + neg)


@dataclass(frozen=True)
class SentimentSummary:
    mean: float
    values: tuple[float, ...]


def group_comment_sentiment(log, group: Iterable[int], scorer: Callable[[str], float] = sentiment) -> SentimentSummary:
    """Mean sentiment of comments where both commenter and post author are (distinct) group members."""
    idx = as_index(log)
    members = set(group)
    values = []
    for ev in idx.events:
        if ev.kind is not ActionKind.COMMENT or ev.actor not in members:
            continue
        target = idx.target_author(ev)
        if target in members and target != ev.actor:
            values.append(scorer(ev.text or ""))
    if not values:
        raise MetricError("no intra-group comments")
    return SentimentSummary(sum(values) / len(values), tuple(values))
