import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from asrlab import kernels
from asrlab.samplers import (
    INIT_KINDS,
    INIT_DEFAULTS,
    ActionId,
    InitialDistributionSpec,
    SamplerError,
    SamplingDistribution,
    apply_action,
    build_triplets,
    distance_weighted_negative,
    init_distribution,
    inverse_density_weight,
    sample_negative,
    semihard_negative,
    sphere_distance_density,
    uniform_edges,
)

N_DRAWS = 100_000
TV_TOL = 0.02


def tv(freq, prob):
    return 0.5 * float(np.abs(np.asarray(freq) - np.asarray(prob)).sum())


def at_distances(ds, dim=16):
    """Anchor at row 0 plus one unit vector per requested distance from it."""
    rows = [np.eye(dim)[0]]
    for k, d in enumerate(ds):
        theta = 2 * math.asin(d / 2)
        v = np.zeros(dim)
        v[0], v[1 + k % (dim - 1)] = math.cos(theta), math.sin(theta)
        rows.append(v)
    return np.array(rows)


def frequencies(draw, candidates, n=N_DRAWS, seed=0):
    rng = np.random.default_rng(seed)
    counts = Counter(draw(rng) for _ in range(n))
    return np.array([counts[c] for c in candidates]) / n


# --- distribution construction ---------------------------------------------------

def test_uniform_edges_and_invariants():
    e = uniform_edges(10)
    assert e[0] == 0.0 and e[-1] == 2.0 and np.all(np.diff(e) > 0)
    with pytest.raises(SamplerError):
        SamplingDistribution(e, np.full(10, 0.2))
    with pytest.raises(SamplerError):
        SamplingDistribution(np.linspace(0, 1, 11), np.full(10, 0.1))
    d = SamplingDistribution(e, np.full(10, 0.1))
    with pytest.raises(ValueError):
        d.weights[0] = 1.0


def test_bin_of_edges():
    d = SamplingDistribution(uniform_edges(10), np.full(10, 0.1))
    assert d.bin_of([0.0, 0.19999, 0.2, 1.9, 2.0]).tolist() == [0, 0, 1, 9, 9]


@pytest.mark.parametrize("kind", INIT_KINDS)
def test_every_init_on_simplex(kind):
    w = init_distribution(InitialDistributionSpec(kind)).weights
    assert abs(w.sum() - 1.0) < 1e-12 and np.all(w > 0)


def test_init_defaults_names():
    assert set(INIT_KINDS) == {"uniform_low", "uniform_high", "distance", "random", "normal_high", "normal_low"}
    assert INIT_DEFAULTS["normal_high"] == {"mu": 1.6, "sigma": 0.04}
    assert INIT_DEFAULTS["normal_low"] == {"mu": 0.5, "sigma": 0.05}
    assert INIT_DEFAULTS["uniform_low"] == {"mu": 0.5, "sigma": 0.2}


def test_normal_high_peaks_at_bin_containing_mu():
    # with ten bins 1.6 is an edge: the two bins touching it tie exactly
    w = init_distribution(InitialDistributionSpec("normal_high"), 10).weights
    assert int(np.argmax(w)) in (7, 8)
    assert w[7] == pytest.approx(w[8], rel=1e-9)
    # with nine bins 1.6 is interior to bin 7 = [1.556, 1.778)
    d = init_distribution(InitialDistributionSpec("normal_high"), 9)
    assert int(np.argmax(d.weights)) == int(d.bin_of(1.6))


def test_normal_low_peaks_at_mu():
    d = init_distribution(InitialDistributionSpec("normal_low"), 10)
    assert int(np.argmax(d.weights)) == int(d.bin_of(0.5)) == 2


def test_uniform_low_window():
    w = init_distribution(InitialDistributionSpec("uniform_low"), 10).weights
    assert w[2] == w.max()  # [0.4, 0.6) lies inside [0.3, 0.7]
    assert w[1] == w[2] == w[3]  # centres 0.3 and 0.7 sit on the closed window ends
    outside = [0, 4, 5, 6, 7, 8, 9]
    assert np.all(w[outside] == w[outside[0]])
    assert w[0] / w[2] == pytest.approx(1e-6)


def test_random_init_deterministic():
    a = init_distribution(InitialDistributionSpec("random", seed=3)).weights
    b = init_distribution(InitialDistributionSpec("random", seed=3)).weights
    assert np.array_equal(a, b)
    assert not np.array_equal(a, init_distribution(InitialDistributionSpec("random", seed=4)).weights)


def test_distance_init_matches_independent_formula():
    d = init_distribution(InitialDistributionSpec("distance"), 10, dim=16)
    centers = d.centers
    raw = []
    for c in centers:
        if c < 0.5:
            raw.append(0.0)
            continue
        q = c**14 * (1 - c * c / 4) ** 6.5 / (2**14 * special.beta(7.5, 7.5))
        raw.append(min(1 / q, 100.0))
    raw = np.maximum(raw, 1e-6)
    np.testing.assert_allclose(d.weights, raw / raw.sum(), rtol=1e-10)


def test_init_errors():
    with pytest.raises(SamplerError):
        InitialDistributionSpec("gaussian")
    with pytest.raises(SamplerError):
        InitialDistributionSpec("normal_low", {"limit": 1.0})
    with pytest.raises(SamplerError):
        init_distribution(InitialDistributionSpec("normal_low"), 1)


@pytest.mark.parametrize("dim", [3, 8, 16, 32])
def test_sphere_density_integrates_to_one(dim):
    total, _ = integrate.quad(lambda t: float(sphere_distance_density(t, dim)), 0, 2, limit=200)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_sphere_density_matches_monte_carlo():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(200_000, 16))
    b = rng.normal(size=(200_000, 16))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    d = np.linalg.norm(a - b, axis=1)
    hist, edges = np.histogram(d, bins=20, range=(0, 2), density=True)
    mids = 0.5 * (edges[1:] + edges[:-1])
    np.testing.assert_allclose(hist, sphere_distance_density(mids, 16), atol=0.03)


# --- actions -------------------------------------------------------------------

def test_action_codes():
    assert ActionId.n_actions(10) == 21
    assert ActionId.encode() == ActionId(0)
    assert ActionId(0).decode() is None
    for code in range(1, 21):
        b, direction = ActionId(code).decode()
        assert ActionId.encode(b, direction == "up") == ActionId(code)


def test_apply_action_noop_and_inverse():
    d = init_distribution(InitialDistributionSpec("random", seed=1))
    assert apply_action(d, 0) is d or np.array_equal(apply_action(d, 0).weights, d.weights)
    for b in range(10):
        there = apply_action(d, ActionId.encode(b, True))
        back = apply_action(there, ActionId.encode(b, False))
        np.testing.assert_allclose(back.weights, d.weights, rtol=0, atol=1e-12)
        assert abs(there.weights.sum() - 1) < 1e-12


def test_apply_action_doubles_ratio():
    d = init_distribution(InitialDistributionSpec("random", seed=1))
    e = apply_action(d, ActionId.encode(4, True))
    assert e.weights[4] / e.weights[0] == pytest.approx(2 * d.weights[4] / d.weights[0])


def test_apply_action_errors():
    d = init_distribution(InitialDistributionSpec("normal_low"))
    with pytest.raises(SamplerError):
        apply_action(d, 21)
    with pytest.raises(SamplerError):
        apply_action(d, 1, c=1.0)


@settings(max_examples=50, deadline=None)
@given(codes=st.lists(st.integers(0, 20), max_size=60))
def test_simplex_closure_under_actions(codes):
    d = init_distribution(InitialDistributionSpec("normal_high"))
    for c in codes:
        d = apply_action(d, c)
        assert np.all(d.weights >= 0) and abs(d.weights.sum() - 1) <= 1e-9


# --- negative selection ----------------------------------------------------------

def test_single_candidate_forced(rng):
    x = at_distances([1.0, 0.3])
    d = SamplingDistribution(uniform_edges(10), np.eye(10)[9])
    assert sample_negative(d, 0, [2], x, rng) == 2
    assert semihard_negative(0, 1, [2], x, 0.2, rng) == 2
    assert distance_weighted_negative(0, [2], x, rng) == 2


def test_empty_candidates_rejected(rng):
    x = at_distances([1.0])
    d = SamplingDistribution(uniform_edges(10), np.full(10, 0.1))
    for call in (lambda: sample_negative(d, 0, [], x, rng),
                 lambda: semihard_negative(0, 1, [], x, 0.2, rng),
                 lambda: distance_weighted_negative(0, [], x, rng)):
        with pytest.raises(SamplerError):
            call()


def test_binned_frequencies_two_bins():
    # three candidates in [0, 1), two in [1, 2]
    x = at_distances([0.2, 0.5, 0.8, 1.2, 1.7])
    d = SamplingDistribution(np.array([0.0, 1.0, 2.0]), np.array([0.7, 0.3]))
    cand = [1, 2, 3, 4, 5]
    f = frequencies(lambda r: sample_negative(d, 0, cand, x, r), cand)
    assert tv([f[:3].sum(), f[3:].sum()], [0.7, 0.3]) < TV_TOL
    assert tv(f, [0.7 / 3] * 3 + [0.15, 0.15]) < TV_TOL


def test_zero_weight_bins_fall_back_to_uniform():
    x = at_distances([0.1, 0.3, 0.5])
    w = np.zeros(10)
    w[9] = 1.0
    d = SamplingDistribution(uniform_edges(10), w)
    cand = [1, 2, 3]
    f = frequencies(lambda r: sample_negative(d, 0, cand, x, r), cand, n=30_000)
    assert tv(f, [1 / 3] * 3) < TV_TOL


def test_distance_weighted_symmetric_pair():
    x = at_distances([0.5, 0.5])
    f = frequencies(lambda r: distance_weighted_negative(0, [1, 2], x, r), [1, 2])
    assert tv(f, [0.5, 0.5]) < TV_TOL


def test_distance_weighted_matches_inverse_density():
    ds = [0.6, 1.0, 1.4]
    x = at_distances(ds)
    # independent weights: closed-form density via the Beta function
    w = np.array([min(100.0, 2**14 * special.beta(7.5, 7.5) / (d**14 * (1 - d * d / 4) ** 6.5)) for d in ds])
    f = frequencies(lambda r: distance_weighted_negative(0, [1, 2, 3], x, r), [1, 2, 3])
    assert tv(f, w / w.sum()) < TV_TOL
    np.testing.assert_allclose(inverse_density_weight(ds, 16), w, rtol=1e-10)


def test_distance_weighted_clips_below_cutoff():
    w = inverse_density_weight([0.05, 0.3, 0.5], 16)
    assert w[0] == w[1] == w[2]


def test_semihard_band_choice(rng):
    # d_ap = 0.5; band (0.5, 0.7): only candidate 3 at 0.6
    x = at_distances([0.5, 0.2, 0.4, 0.6, 0.9])
    for _ in range(50):
        assert semihard_negative(0, 1, [2, 3, 4, 5], x, 0.2, rng) == 4


def test_semihard_fallbacks(rng):
    x = at_distances([0.5, 0.2, 0.3, 0.95, 0.8])
    # nothing in (0.5, 0.7): closest farther than d_ap is 0.8
    assert semihard_negative(0, 1, [2, 3, 4, 5], x, 0.2, rng) == 5
    # nothing farther than d_ap: uniform over all candidates
    f = frequencies(lambda r: semihard_negative(0, 1, [2, 3], x, 0.2, r), [2, 3], n=20_000)
    assert tv(f, [0.5, 0.5]) < TV_TOL


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), gamma=st.floats(0.05, 1.0))
def test_semihard_band_property(seed, gamma):
    r = np.random.default_rng(seed)
    x = r.normal(size=(9, 4))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    cand = list(range(2, 9))
    d_an = np.linalg.norm(x[cand] - x[0], axis=1)
    d_ap = np.linalg.norm(x[1] - x[0])
    j = semihard_negative(0, 1, cand, x, gamma, r)
    in_band = (d_an > d_ap) & (d_an < d_ap + gamma)
    if in_band.any():
        assert in_band[cand.index(j)]


# --- triplet assembly ------------------------------------------------------------

def _batch(rng, per_class=(3, 3, 2)):
    labels = np.repeat(np.arange(len(per_class)), per_class)
    x = rng.normal(size=(labels.size, 6))
    return labels, x / np.linalg.norm(x, axis=1, keepdims=True)


@pytest.mark.parametrize("strategy", ["random", "semihard", "distance", "binned"])
def test_triplet_label_contract(strategy, rng):
    labels, x = _batch(rng)
    dist = init_distribution(InitialDistributionSpec("normal_low"))
    for _ in range(20):
        t = build_triplets(np.arange(labels.size), labels, strategy, x, rng, dist=dist)
        assert len(t) == labels.size
        assert np.all(labels[t.a] == labels[t.p]) and np.all(labels[t.a] != labels[t.n])
        assert np.all(t.a != t.p)


def test_triplets_need_two_classes(rng):
    labels = np.zeros(4, dtype=int)
    with pytest.raises(SamplerError):
        build_triplets(np.arange(4), labels, "random", rng.normal(size=(4, 3)), rng)
    with pytest.raises(SamplerError):
        build_triplets(np.arange(4), np.array([0, 0, 1, 1]), "binned", rng.normal(size=(4, 3)), rng)


def test_triplets_skip_singleton_anchors(rng):
    labels = np.array([0, 0, 1])
    t = build_triplets(np.arange(3), labels, "random", rng.normal(size=(3, 3)), rng)
    assert sorted(t.a.tolist()) == [0, 1]


def test_random_equals_uniform_binned_when_bins_are_singletons():
    # anchor 0, positive 1, three negatives each alone in its own bin
    x = at_distances([0.1, 0.3, 1.1, 1.9])
    labels = np.array([0, 0, 1, 2, 3])
    uni = SamplingDistribution(uniform_edges(10), np.full(10, 0.1))

    def count(strategy):
        rng = np.random.default_rng(0)
        c = Counter()
        for _ in range(N_DRAWS // 10):
            t = build_triplets(np.arange(5), labels, strategy, x, rng, dist=uni)
            c[int(t.n[0])] += 1
        return np.array([c[k] for k in (2, 3, 4)]) / (N_DRAWS // 10)

    f_random, f_binned = count("random"), count("binned")
    assert tv(f_random, f_binned) < TV_TOL
    f_single = frequencies(lambda r: sample_negative(uni, 0, [2, 3, 4], x, r), [2, 3, 4], n=N_DRAWS, seed=1)
    assert tv(f_random, f_single) < TV_TOL


def test_random_differs_from_uniform_binned_when_bins_are_shared():
    # two negatives share a bin: bin-first sampling halves their individual mass
    x = at_distances([0.1, 1.02, 1.05, 1.9])
    uni = SamplingDistribution(uniform_edges(10), np.full(10, 0.1))
    f = frequencies(lambda r: sample_negative(uni, 0, [2, 3, 4], x, r), [2, 3, 4], n=30_000)
    assert tv(f, [0.25, 0.25, 0.5]) < TV_TOL
    assert tv(f, [1 / 3] * 3) > 0.1


# --- backends --------------------------------------------------------------------

needs_both = pytest.mark.skipif(len(kernels.backends()) < 2, reason="compiled backend not built")


@needs_both
@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 6), m=st.integers(1, 12))
def test_backends_bit_identical(seed, n, m):
    r = np.random.default_rng(seed)
    impl = kernels.backends()
    valid = (r.random((n, m)) < 0.7).astype(np.uint8)
    w = r.random((n, m)) * (r.random((n, m)) < 0.8)
    u, u2 = r.random(n), r.random(n)
    bins = r.integers(0, 5, (n, m))
    bw = r.random(5) * (r.random(5) < 0.7)
    d = r.random((n, m)) * 2
    d_ap = r.random(n)
    for name, args in [
        ("select_weighted", (w, valid, u)),
        ("select_binned", (bins, valid, bw, u, u2)),
        ("select_semihard", (d, d_ap, valid, 0.3, u)),
    ]:
        fn = getattr(kernels, name)
        assert np.array_equal(fn(*args, impl=impl["cython"]), fn(*args, impl=impl["python"])), name
    N = m + 1
    dm = np.round(r.random((N, N)) * 4) / 4  # coarse grid forces distance ties
    dm = dm + dm.T
    lab = r.integers(0, 3, N)
    ks = np.array([k for k in (1, 2, 4, 8) if k < N])
    if ks.size:
        assert np.array_equal(kernels.knn_hit_counts(dm, lab, ks, impl=impl["cython"]),
                              kernels.knn_hit_counts(dm, lab, ks, impl=impl["python"]))


def test_rows_without_valid_candidates_return_minus_one():
    out = kernels.select_weighted(np.ones((2, 3)), np.array([[0, 0, 0], [0, 1, 0]], dtype=np.uint8),
                                  np.array([0.5, 0.5]))
    assert out.tolist() == [-1, 1]
