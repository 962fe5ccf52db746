import itertools

import numpy as np
import pytest

from fedreact.evocluster import (ClusterAssignment, affect_iterate, agglomerative,
                                 estimate_cluster_count, estimate_moments,
                                 forgetting_factor, silhouette_score,
                                 similarity_matrix, smooth, wcss)
from fedreact.metrics import rand_score
from fedreact.numerics import DegenerateInputError, cosine_similarity, rng_stream


def _block_matrix(sizes, intra, inter):
    K = sum(sizes)
    M = np.full((K, K), inter, dtype=float)
    start = 0
    for s in sizes:
        M[start:start + s, start:start + s] = intra
        start += s
    np.fill_diagonal(M, 1.0)
    return M


def _block_labels(sizes):
    return np.repeat(np.arange(len(sizes)), sizes)


# -- similarity matrix --------------------------------------------------------

def test_similarity_identical_vectors_gives_all_ones():
    vecs = [np.array([1.0, 2.0])] * 4
    np.testing.assert_allclose(similarity_matrix(vecs), np.ones((4, 4)))


def test_similarity_orthogonal_groups_gives_blocks():
    vecs = [np.array([1.0, 0.0]), np.array([2.0, 0.0]),
            np.array([0.0, 1.0]), np.array([0.0, 3.0])]
    expected = _block_matrix([2, 2], 1.0, 0.0)
    np.testing.assert_allclose(similarity_matrix(vecs), expected, atol=1e-12)


def test_similarity_matches_pairwise_cosine_oracle():
    rng = rng_stream(0, "sim")
    vecs = [rng.standard_normal(5) for _ in range(3)]
    W = similarity_matrix(vecs)
    for i in range(3):
        for j in range(3):
            want = 1.0 if i == j else cosine_similarity(vecs[i], vecs[j])
            assert W[i, j] == pytest.approx(want, abs=1e-12)


def test_similarity_rejects_zero_vector():
    with pytest.raises(DegenerateInputError):
        similarity_matrix([np.zeros(3), np.ones(3)])


# -- smoothing ----------------------------------------------------------------

def test_smooth_endpoints_and_hand_value():
    prev = np.array([[0.2]])
    cur = np.array([[0.6]])
    np.testing.assert_allclose(smooth(prev, cur, 0.0), cur)
    np.testing.assert_allclose(smooth(prev, cur, 1.0), prev)
    np.testing.assert_allclose(smooth(prev, cur, 0.5), [[0.4]])
    with pytest.raises(ValueError):
        smooth(prev, cur, 1.5)


def test_smooth_preserves_symmetry():
    rng = rng_stream(1, "sym")
    A = rng.standard_normal((5, 5))
    A = 0.5 * (A + A.T)
    B = rng.standard_normal((5, 5))
    B = 0.5 * (B + B.T)
    out = smooth(A, B, 0.3)
    np.testing.assert_allclose(out, out.T)


# -- moment estimation ---------------------------------------------------------

def test_moments_constant_matrix():
    W = _block_matrix([2, 2], 0.5, 0.5)  # every off-diagonal entry 0.5
    E, V = estimate_moments(W, _block_labels([2, 2]))
    off = ~np.eye(4, dtype=bool)
    np.testing.assert_allclose(E[off], 0.5)
    np.testing.assert_allclose(V, 0.0)
    np.testing.assert_allclose(np.diag(E), 1.0)


def test_moments_hand_computed_case():
    # two 2-client clusters; intra entries {0.9, 0.9}; inter block
    # {0.1, 0.1, 0.1, 0.3} -> intra mean 0.9, inter mean 0.15, inter
    # sample variance 0.01
    W = np.eye(4)
    W[0, 1] = W[1, 0] = 0.9
    W[2, 3] = W[3, 2] = 0.9
    inter = np.array([[0.1, 0.1], [0.1, 0.3]])
    W[:2, 2:] = inter
    W[2:, :2] = inter.T
    E, V = estimate_moments(W, _block_labels([2, 2]))
    assert E[0, 1] == pytest.approx(0.9)
    assert V[0, 1] == pytest.approx(0.0)
    assert E[0, 2] == pytest.approx(0.15)
    assert V[0, 2] == pytest.approx(0.01)
    assert E[3, 0] == pytest.approx(0.15)  # symmetric fill


def test_moments_reproduce_perfect_block_matrix():
    W = _block_matrix([3, 2, 3], 0.8, 0.1)
    E, V = estimate_moments(W, _block_labels([3, 2, 3]))
    off = ~np.eye(8, dtype=bool)
    np.testing.assert_allclose(E[off], W[off])
    np.testing.assert_allclose(V, 0.0)


def test_moments_zero_within_block_variance_is_exactly_zero():
    W = _block_matrix([4, 4], 0.37, -0.21)
    _, V = estimate_moments(W, _block_labels([4, 4]))
    np.testing.assert_array_equal(V, np.zeros((8, 8)))


# -- forgetting factor ----------------------------------------------------------

def test_forgetting_factor_extremes_and_hand_value():
    E = _block_matrix([2, 2], 0.5, 0.1)
    psi_neq = E + 0.3
    np.fill_diagonal(psi_neq, 1.0)
    zero_var = np.zeros((4, 4))
    assert forgetting_factor(psi_neq, E, zero_var) == 0.0

    some_var = np.full((4, 4), 0.2)
    assert forgetting_factor(E.copy(), E, some_var) == 1.0

    # K=2: single off-diagonal pair each way; choose values so that
    # sum Var = 2 and sum (psi - E)^2 = 2 -> a = 0.5
    psi = np.array([[1.0, 1.0], [1.0, 1.0]])
    E2 = np.array([[1.0, 0.0], [0.0, 1.0]])
    V2 = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert forgetting_factor(psi, E2, V2) == pytest.approx(0.5)


def test_forgetting_factor_zero_over_zero_is_zero():
    E = _block_matrix([2, 2], 0.5, 0.1)
    assert forgetting_factor(E.copy(), E, np.zeros((4, 4))) == 0.0


def test_forgetting_factor_scale_consistency():
    rng = rng_stream(2, "scale")
    E = rng.uniform(0, 1, (5, 5))
    E = 0.5 * (E + E.T)
    psi = E + rng.uniform(-0.3, 0.3, (5, 5))
    psi = 0.5 * (psi + psi.T)
    V = rng.uniform(0.01, 0.2, (5, 5))
    V = 0.5 * (V + V.T)
    base = forgetting_factor(psi, E, V)
    for c in (0.5, 3.0, 100.0):
        scaled_psi = E + np.sqrt(c) * (psi - E)
        assert forgetting_factor(scaled_psi, E, c * V) == pytest.approx(base, abs=1e-12)


# -- agglomerative clustering ----------------------------------------------------

def _brute_force_two_partition(sim):
    """Exhaustive search over 2-partitions maximizing total intra-similarity."""
    K = sim.shape[0]
    best, best_score = None, -np.inf
    for mask in range(1, 2 ** (K - 1)):  # client 0 always in part 0
        labels = np.array([(mask >> i) & 1 for i in range(K)])
        if labels.min() == labels.max():
            continue
        score = 0.0
        for i in range(K):
            for j in range(i + 1, K):
                if labels[i] == labels[j]:
                    score += sim[i, j]
        if score > best_score:
            best, best_score = labels, score
    return best


def test_agglomerative_trivial_counts():
    W = _block_matrix([2, 3], 0.9, 0.1)
    np.testing.assert_array_equal(agglomerative(W, 5), np.arange(5))
    np.testing.assert_array_equal(agglomerative(W, 1), np.zeros(5, dtype=int))


def test_agglomerative_recovers_blocks_and_matches_brute_force():
    rng = rng_stream(3, "agg")
    for trial in range(20):
        sizes = [int(rng.integers(2, 5)), int(rng.integers(2, 5))]
        K = sum(sizes)
        W = _block_matrix(sizes, 1.0, 0.0)
        noise = 0.03 * rng.standard_normal((K, K))
        W = W + 0.5 * (noise + noise.T)
        np.fill_diagonal(W, 1.0)
        got = agglomerative(W, 2)
        want = _brute_force_two_partition(W)
        assert rand_score(got, want) == 1.0


def test_agglomerative_is_permutation_equivariant():
    rng = rng_stream(4, "perm")
    for trial in range(10):
        K = 9
        W = rng.uniform(-1, 1, (K, K))
        W = 0.5 * (W + W.T)
        np.fill_diagonal(W, 1.0)
        labels = agglomerative(W, 3)
        perm = rng.permutation(K)
        permuted = agglomerative(W[np.ix_(perm, perm)], 3)
        # permuted[i] must match labels[perm[i]] as a partition
        assert rand_score(permuted, labels[perm]) == 1.0


# -- AFFECT iteration -------------------------------------------------------------

def test_affect_fixed_point_assignment_is_stable():
    psi_prev = _block_matrix([3, 3], 0.9, 0.1)
    W = psi_prev.copy()
    want = _block_labels([3, 3])
    for iters in (1, 2, 5):
        _, _, labels = affect_iterate(psi_prev, W, 2, iters)
        np.testing.assert_array_equal(labels, want)


def test_affect_single_iteration_is_composition_of_suboperations():
    rng = rng_stream(5, "aff")
    psi_prev = _block_matrix([3, 2], 0.7, 0.2)
    noise = 0.05 * rng.standard_normal((5, 5))
    W = psi_prev + 0.5 * (noise + noise.T)
    np.fill_diagonal(W, 1.0)
    psi, a, labels = affect_iterate(psi_prev, W, 2, max_iters=1)
    want_labels = agglomerative(W, 2)  # iteration 1 clusters the raw W
    E, V = estimate_moments(W, want_labels)
    want_a = forgetting_factor(psi_prev, E, V)
    want_psi = smooth(psi_prev, W, want_a)
    np.testing.assert_array_equal(labels, want_labels)
    assert a == pytest.approx(want_a)
    np.testing.assert_allclose(psi, want_psi)


def test_affect_initial_round_uses_zero_history():
    W = _block_matrix([2, 2], 0.8, 0.1)
    psi, a, _ = affect_iterate(np.zeros((4, 4)), W, 2, 5)
    np.testing.assert_allclose(psi, (1.0 - a) * W)


def test_affect_recovers_noise_free_blocks():
    for K, C in ((6, 2), (9, 3), (16, 4), (12, 3)):
        sizes = [K // C] * C
        sizes[-1] += K - sum(sizes)
        W = _block_matrix(sizes, 0.9, 0.05)
        _, _, labels = affect_iterate(np.zeros((K, K)), W, C, 5)
        assert rand_score(labels, _block_labels(sizes)) == 1.0


def test_affect_factor_tracks_grid_search_risk_minimizer():
    # W_t = psi + N with known psi: a_t should approach the minimizer of
    # a^2 ||psi - psi_prev||^2 + (1-a)^2 E||N||^2 over the off-diagonal
    rng = rng_stream(6, "grid")
    sizes = [10, 10, 10]
    psi = _block_matrix(sizes, 0.8, 0.2)
    K = psi.shape[0]
    off = ~np.eye(K, dtype=bool)
    hits = 0
    trials = 40
    for trial in range(trials):
        sigma = 0.1
        psi_prev = np.zeros((K, K))
        for t in range(3):
            noise = sigma * rng.standard_normal((K, K))
            W = psi + 0.5 * (noise + noise.T)
            np.fill_diagonal(W, 1.0)
            psi_prev, _, _ = affect_iterate(psi_prev, W, 3, 5)
        noise = sigma * rng.standard_normal((K, K))
        W = psi + 0.5 * (noise + noise.T)
        np.fill_diagonal(W, 1.0)
        _, a_t, _ = affect_iterate(psi_prev, W, 3, 5)

        # symmetrized noise halves the per-entry variance
        noise_sq = (sigma ** 2 / 2.0) * off.sum()
        grid = np.arange(0.0, 1.0001, 0.01)
        risks = [a * a * np.sum((psi - psi_prev)[off] ** 2) + (1 - a) ** 2 * noise_sq
                 for a in grid]
        a_star = grid[int(np.argmin(risks))]
        hits += int(abs(a_t - a_star) <= 0.1)
    assert hits >= 0.9 * trials


# -- cluster-count estimation -------------------------------------------------

def test_wcss_identical_points_and_two_point_case():
    pts = np.ones((5, 3))
    assert wcss(pts, np.zeros(5, dtype=int)) == 0.0
    # two points at distance 3: centroid at the midpoint, WCSS = d^2 / 2
    pts = np.array([[0.0, 0.0], [0.0, 3.0]])
    assert wcss(pts, np.zeros(2, dtype=int)) == pytest.approx(4.5)


def test_estimate_cluster_count_on_identical_points():
    pts = np.tile(np.array([1.0, 2.0]), (6, 1))
    _, _, curves = estimate_cluster_count(pts, range(1, 5))
    np.testing.assert_allclose(curves["wcss"], 0.0)


def test_estimate_cluster_count_finds_three_blobs():
    rng = rng_stream(7, "blob")
    centers = np.array([[5.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 5.0]])
    pts = np.vstack([c + 0.2 * rng.standard_normal((6, 3)) for c in centers])
    elbow_c, sil_c, _ = estimate_cluster_count(pts, range(1, 7))
    assert elbow_c == 3
    assert sil_c == 3


def test_silhouette_singleton_scores_zero():
    pts = np.array([[0.0], [0.1], [5.0]])
    val = silhouette_score(pts, np.array([0, 0, 1]))
    # singleton cluster contributes 0; the other two score positively
    assert 0 < val < 1
    assert silhouette_score(pts, np.zeros(3, dtype=int)) == 0.0


def test_cluster_assignment_membership_helpers():
    a = ClusterAssignment(3, (0, 2, 5), np.array([0, 1, 0]))
    assert a.members(0) == frozenset({0, 5})
    assert a.members(1) == frozenset({2})
    assert a.as_dict() == {0: 0, 2: 1, 5: 0}
    assert a.num_clusters == 2
