"""Independent brute-force reference implementations used only by the tests."""

from __future__ import annotations

import itertools
import math
from collections import Counter


def density(nodes, edges):
    n = len(nodes)
    ordered = [(a, b) for a in nodes for b in nodes if a != b]
    return sum((a, b) in edges for a, b in ordered) / (n * (n - 1))


def clustering(nodes, edges):
    und = {frozenset(e) for e in edges if e[0] != e[1]}
    total = 0.0
    for v in nodes:
        nb = [u for u in nodes if u != v and frozenset((u, v)) in und]
        k = len(nb)
        if k < 2:
            continue
        tri = sum(1 for x, y in itertools.combinations(nb, 2) if frozenset((x, y)) in und)
        total += tri / math.comb(k, 2)
    return total / len(nodes)


def reciprocity(edges):
    edges = set(edges)
    return sum((b, a) in edges for a, b in edges) / len(edges)


def gini(xs):
    n = len(xs)
    mean = sum(xs) / n
    return sum(abs(a - b) for a in xs for b in xs) / (2 * n * n * mean)


def cascade(parent_of: dict, root):
    """(size, depth, breadth) by recursive descent over a child->parent map."""
    children = {}
    for c, p in parent_of.items():
        children.setdefault(p, []).append(c)
    levels = Counter()

    def walk(node, depth):
        levels[depth] += 1
        for c in children.get(node, []):
            walk(c, depth + 1)

    walk(root, 0)
    return sum(levels.values()), max(levels), max(levels.values())


def tfidf_cosine(docs, i, j):
    n = len(docs)
    terms = sorted({t for d in docs for t in d})
    def vec(d):
        v = []
        for t in terms:
            tf = d.count(t)
            df = sum(1 for x in docs if t in x)
            v.append(tf * (math.log((1 + n) / (1 + df)) + 1))
        return v
    a, b = vec(docs[i]), vec(docs[j])
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0 or nb == 0:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def mwu_exact(a, b):
    """U of ``a`` and the two-sided exact p by enumerating every relabeling of the pooled sample."""
    pooled = list(a) + list(b)
    n, m = len(a), len(b)

    def u_of(xs, ys):
        return sum(1.0 if x > y else 0.5 if x == y else 0.0 for x in xs for y in ys)

    u = u_of(a, b)
    dev = abs(u - n * m / 2)
    hits = total = 0
    for idx in itertools.combinations(range(n + m), n):
        chosen = set(idx)
        xs = [pooled[k] for k in idx]
        ys = [pooled[k] for k in range(n + m) if k not in chosen]
        total += 1
        if abs(u_of(xs, ys) - n * m / 2) >= dev - 1e-9:
            hits += 1
    return u, hits / total
