"""Exhaustive reference implementations used as independent oracles.

Plain Python loops over points, pairs and contingency cells; no numpy and
nothing imported from asrlab.
"""

import itertools
import math


def brute_recall(points, labels, ks):
    n = len(points)
    out = {}
    for k in ks:
        hits = 0
        for q in range(n):
            others = sorted(
                (sum((a - b) ** 2 for a, b in zip(points[q], points[j])), j) for j in range(n) if j != q
            )
            if any(labels[j] == labels[q] for _, j in others[:k]):
                hits += 1
        out[k] = hits / n
    return out


def brute_pair_counts(assign, labels):
    tp = pred = actual = 0
    for i, j in itertools.combinations(range(len(labels)), 2):
        same_c = assign[i] == assign[j]
        same_l = labels[i] == labels[j]
        pred += same_c
        actual += same_l
        tp += same_c and same_l
    return tp, pred, actual


def brute_f1(assign, labels):
    tp, pred, actual = brute_pair_counts(assign, labels)
    return 0.0 if tp == 0 else 2 * tp / (pred + actual)


def brute_nmi(assign, labels):
    n = len(labels)
    cs, ls = sorted(set(assign)), sorted(set(labels))
    a = {c: sum(1 for x in assign if x == c) for c in cs}
    b = {l: sum(1 for y in labels if y == l) for l in ls}
    h_a = math.fsum(-(v / n) * math.log(v / n) for v in a.values())
    h_b = math.fsum(-(v / n) * math.log(v / n) for v in b.values())
    if h_a == 0.0 and h_b == 0.0:
        return 1.0
    if h_a == 0.0 or h_b == 0.0:
        return 0.0
    terms = []
    for c in cs:
        for l in ls:
            nij = sum(1 for x, y in zip(assign, labels) if x == c and y == l)
            if nij:
                terms.append((nij / n) * math.log(nij * n / (a[c] * b[l])))
    return min(1.0, max(0.0, 2.0 * math.fsum(terms) / (h_a + h_b)))


def random_instance(rng, max_n=12):
    """Small instance on an integer grid so that distance ties occur and are exact."""
    n = int(rng.integers(4, max_n + 1))
    dim = int(rng.integers(1, 4))
    points = [[int(v) for v in rng.integers(-3, 4, dim)] for _ in range(n)]
    labels = [int(v) for v in rng.integers(0, int(rng.integers(2, 4)), n)]
    assign = [int(v) for v in rng.integers(0, int(rng.integers(1, 5)), n)]
    return points, labels, assign
