import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import normalized_mutual_info_score

from asrlab.metrics import (
    ClusterAssignment,
    MetricError,
    MetricReport,
    evaluate,
    f1_from_counts,
    kmeans,
    nmi,
    pairwise_f1,
    recall_at_k,
    weighted_metric,
)
from oracles import brute_f1, brute_nmi, brute_recall, random_instance


def test_recall_two_tight_clusters(rng):
    x = np.vstack([rng.normal(0, 0.01, (5, 3)), rng.normal(5, 0.01, (5, 3))])
    labels = [0] * 5 + [1] * 5
    assert recall_at_k(x, labels, [1])[1] == 1.0
    assert recall_at_k(x, labels, [9])[9] == 1.0


def test_recall_hand_placed_points():
    pts = [[0, 0], [1, 0], [0, 2], [3, 0], [3, 1], [5, 5]]
    labels = [0, 1, 0, 1, 0, 1]
    got = recall_at_k(np.array(pts, float), labels, [1, 2, 4])
    assert got == brute_recall(pts, labels, [1, 2, 4])
    # query 0: neighbours 1 (d=1), then 2 (d=2) -> miss at k=1, hit at k=2
    assert got[1] == 1 / 6


def test_recall_ties_go_to_lower_index():
    # query 0 has rows 1 and 2 at the same distance; row 1 shares its label
    x = np.array([[0.0], [1.0], [-1.0]])
    assert recall_at_k(x, [0, 0, 1], [1])[1] == 2 / 3  # queries 0 and 1 hit
    assert recall_at_k(x, [0, 1, 0], [1])[1] == 1 / 3  # query 0 takes row 1 and misses


def test_recall_errors():
    with pytest.raises(MetricError):
        recall_at_k(np.zeros((3, 2)), [0, 1, 0], [3])
    with pytest.raises(MetricError):
        recall_at_k(np.zeros((3, 2)), [0, 1], [1])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_recall_monotone_and_bounded(seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(20, 3))
    rec = recall_at_k(x, r.integers(0, 4, 20), [1, 2, 4, 8])
    vals = [rec[k] for k in (1, 2, 4, 8)]
    assert vals == sorted(vals) and 0 <= vals[0] and vals[-1] <= 1


@pytest.mark.parametrize("seed", range(50))
def test_oracle_equivalence(seed):
    pts, labels, assign = random_instance(np.random.default_rng(seed))
    ks = [k for k in (1, 2, 4, 8) if k < len(pts)]
    assert recall_at_k(np.array(pts, float), labels, ks) == brute_recall(pts, labels, ks)
    assert nmi(assign, labels) == brute_nmi(assign, labels)
    assert pairwise_f1(assign, labels) == brute_f1(assign, labels)


@pytest.mark.parametrize("seed", range(20))
def test_nmi_matches_sklearn(seed):
    r = np.random.default_rng(seed)
    a, b = r.integers(0, 4, 30), r.integers(0, 3, 30)
    assert nmi(a, b) == pytest.approx(normalized_mutual_info_score(b, a, average_method="arithmetic"), abs=1e-12)


def test_nmi_endpoints():
    labels = [0, 0, 1, 1, 2, 2]
    assert nmi([5, 5, 3, 3, 9, 9], labels) == 1.0
    assert nmi([0] * 6, labels) == 0.0
    with pytest.raises(MetricError):
        nmi([0, 1], [0, 1, 1])


def test_nmi_eight_point_contingency():
    assign = [0, 0, 0, 0, 1, 1, 1, 1]
    labels = [0, 0, 0, 1, 1, 1, 1, 0]
    # table [[3,1],[1,3]], marginals 4/4 -> I = ln2 + (3/4)ln(3/4) + (1/4)ln(1/4), H = ln 2
    ln = np.log
    mi = 2 * (3 / 8) * ln(3 / 8 / (1 / 4)) + 2 * (1 / 8) * ln(1 / 8 / (1 / 4))
    assert nmi(assign, labels) == pytest.approx(mi / ln(2), abs=1e-15)


def test_f1_examples():
    labels = [0, 0, 0, 1, 1, 1]
    assert pairwise_f1(labels, labels) == 1.0
    assert pairwise_f1([7, 7, 7, 2, 2, 2], labels) == 1.0
    # one misassigned point: clusters {0,1},{2,3,4,5}; tp=1+3=4, pred=1+6=7, actual=6
    assert pairwise_f1([0, 0, 1, 1, 1, 1], labels) == 8 / 13
    assert f1_from_counts(0, 0, 5) == 0.0
    with pytest.raises(MetricError):
        pairwise_f1([0], [0])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_cluster_scores_permutation_invariant(seed):
    r = np.random.default_rng(seed)
    a, b = r.integers(0, 4, 15), r.integers(0, 3, 15)
    perm = r.permutation(4)
    assert nmi(perm[a], b) == pytest.approx(nmi(a, b), abs=1e-15)
    assert pairwise_f1(perm[a], b) == pairwise_f1(a, b)
    assert 0 <= nmi(a, b) <= 1 and 0 <= pairwise_f1(a, b) <= 1


def test_kmeans_k_equals_n(rng):
    x = rng.normal(size=(7, 3))
    c = kmeans(x, 7, seed=0)
    assert c.inertia == 0.0 and sorted(c.labels.tolist()) == list(range(7))


def test_kmeans_single_cluster(rng):
    x = rng.normal(size=(9, 2))
    c = kmeans(x, 1)
    assert np.all(c.labels == 0)
    np.testing.assert_allclose(c.centroids[0], x.mean(axis=0), atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(1, 6))
def test_kmeans_inertia_non_increasing(seed, k):
    x = np.random.default_rng(seed).normal(size=(30, 3))
    c = kmeans(x, k, seed=seed)
    assert all(b <= a + 1e-9 for a, b in zip(c.history, c.history[1:]))
    assert c.labels.max() < k and c.inertia >= 0
    assert np.array_equal(kmeans(x, k, seed=seed).labels, c.labels)


def test_kmeans_duplicate_points_and_errors():
    x = np.zeros((5, 2))
    c = kmeans(x, 3)
    assert c.inertia == 0.0
    with pytest.raises(MetricError):
        kmeans(x, 6)


def test_weighted_metric():
    rep = MetricReport({1: 0.8}, 0.6, 0.5)
    assert weighted_metric(rep, {"R@1": 1.0}) == 0.8
    assert weighted_metric(rep) == pytest.approx(0.7)
    with pytest.raises(MetricError):
        weighted_metric(rep, {"R@1": 0.6, "nmi": 0.5})
    with pytest.raises(MetricError):
        weighted_metric(rep, {"R@3": 1.0})


def test_evaluate_report(rng):
    x = np.vstack([rng.normal(0, 0.1, (10, 4)), rng.normal(3, 0.1, (10, 4))])
    rep = evaluate(x, [0] * 10 + [1] * 10)
    assert rep.recall[1] == 1.0 and rep.nmi == 1.0 and rep.f1 == 1.0 and rep.weighted == 1.0
    assert set(rep.to_json()) == {"R@1", "R@2", "R@4", "R@8", "nmi", "f1", "weighted"}
    assert isinstance(kmeans(x, 2), ClusterAssignment)
