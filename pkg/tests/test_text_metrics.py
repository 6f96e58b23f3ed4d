import math
from collections import Counter

import numpy as np
import pytest

from iosim.metrics.graph import MetricError
from iosim.metrics.text import (
    Lexicon,
    co_retweet_similarity,
    cosine,
    embed,
    group_comment_sentiment,
    group_content_similarity,
    reshare_documents,
    sentiment,
    tfidf,
    tokenize,
)

from oracles import tfidf_cosine


def test_embed_self_similarity_and_empty():
    assert cosine(embed("jobs for families"), embed("jobs for families")) == pytest.approx(1.0, abs=1e-12)
    assert not embed("").any()


def test_embed_disjoint_tokens_near_zero():
    a, b = "alpha beta gamma", "delta epsilon zeta"
    # exact bag-of-words oracle: disjoint vocabularies are orthogonal
    exact = 0.0
    assert abs(cosine(embed(a), embed(b)) - exact) <= 0.35
    big = 1 << 20
    assert cosine(embed(a, big), embed(b, big)) == pytest.approx(0.0, abs=1e-12)


def test_cosine_fixtures():
    assert cosine([1, 0, 0], [1, 0, 0]) == 1.0
    assert cosine([1, 0, 0], [0, 1, 0]) == 0.0
    assert cosine([1, 1, 0], [1, 0, 0]) == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    assert cosine([0, 0], [1, 2]) == 0.0
    with pytest.raises(ValueError):
        cosine([1, 2], [1, 2, 3])


def test_group_content_similarity_identical():
    posts = [(0, "same words here")] * 3
    assert group_content_similarity(posts, [0]).mean == pytest.approx(1.0)


def test_group_content_similarity_hand_average():
    vecs = {"a": np.array([1.0, 0.0]), "b": np.array([1.0, 0.0]), "c": np.array([0.5, math.sqrt(3) / 2])}
    posts = [(0, "a"), (1, "b"), (2, "c")]
    res = group_content_similarity(posts, [0, 1, 2], embedder=vecs.__getitem__)
    assert sorted(res.pairs) == pytest.approx([0.5, 0.5, 1.0])
    assert res.mean == pytest.approx(2 / 3)


def test_group_content_similarity_needs_two_posts():
    with pytest.raises(MetricError):
        group_content_similarity([(0, "x")], [0])


def test_tfidf_single_doc():
    (v,) = tfidf([["p1", "p1", "p2"]])
    assert v["p1"] == pytest.approx(2 / math.sqrt(5)) and v["p2"] == pytest.approx(1 / math.sqrt(5))


def test_tfidf_idf_monotone():
    docs = [["common", "rare"], ["common"], ["common"]]
    vecs = tfidf(docs)
    # in doc 0 both terms have tf 1, so weight order follows idf
    assert vecs[0]["common"] < vecs[0]["rare"]


def test_tfidf_pair_matches_oracle():
    docs = [["p1", "p2"], ["p1", "p3"]]
    v = tfidf(docs)
    dot = sum(w * v[1].get(k, 0) for k, w in v[0].items())
    assert dot == pytest.approx(tfidf_cosine(docs, 0, 1), abs=1e-12)


def test_tfidf_empty_doc_is_zero():
    assert tfidf([[], ["a"]])[0] == {}


def test_tfidf_against_sklearn():
    sk = pytest.importorskip("sklearn.feature_extraction.text")
    docs = [["p1", "p2", "p2"], ["p2", "p3"], ["p1", "p4", "p4", "p4"]]
    ref = sk.TfidfVectorizer(analyzer=lambda d: d, smooth_idf=True, norm="l2").fit(docs)
    mat = ref.transform(docs).toarray()
    vocab = ref.vocabulary_
    for row, vec in zip(mat, tfidf(docs)):
        for term, col in vocab.items():
            assert vec.get(term, 0.0) == pytest.approx(row[col], abs=1e-12)


def test_co_retweet_identical_and_disjoint(builder):
    roots = [builder.post(0, 9) for _ in range(4)]
    for r in roots[:2]:
        builder.reshare(1, 0, r)
        builder.reshare(1, 1, r)
    for r in roots[2:]:
        builder.reshare(1, 2, r)
    log = builder.sorted()
    assert co_retweet_similarity(log, [0, 1]).mean == pytest.approx(1.0)
    assert co_retweet_similarity(log, [0, 2]).mean == 0.0


def test_co_retweet_resolves_reshare_chains(builder):
    root = builder.post(0, 9)
    first = builder.reshare(1, 0, root)
    builder.reshare(2, 1, first)
    docs = reshare_documents(builder.sorted(), [0, 1])
    assert docs[0] == docs[1] == Counter({root: 1})


def test_co_retweet_needs_two_members():
    with pytest.raises(MetricError):
        co_retweet_similarity([], [0])


def test_sentiment_formula():
    lex = Lexicon(frozenset({"good", "great"}), frozenset({"bad"}))
    assert sentiment("good great", lex) == 1.0
    assert sentiment("nothing here", lex) == 0.5
    assert sentiment("good great bad", lex) == pytest.approx(0.5 + 0.5 / 3)


def test_default_lexicon_polarity():
    assert sentiment("Great point, totally agree!") > 0.5
    assert sentiment("This is misleading and wrong.") < 0.5
    assert tokenize("Hello, World!") == ["hello", "world"]


def test_group_comment_sentiment(builder):
    p = builder.post(0, 0)
    builder.comment(1, 1, p, "plain words")
    lex = Lexicon(frozenset({"good"}), frozenset({"bad"}))
    scorer = lambda t: sentiment(t, lex)  # noqa: E731
    assert group_comment_sentiment(builder.sorted(), [0, 1], scorer).mean == 0.5
    builder.comment(2, 0, p, "self comment is ignored good")
    builder.comment(2, 1, p, "good")
    assert group_comment_sentiment(builder.sorted(), [0, 1], scorer).mean == 0.75


def test_group_comment_sentiment_needs_comments():
    with pytest.raises(MetricError):
        group_comment_sentiment([], [0, 1])
