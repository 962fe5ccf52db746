"""Evolutionary clustering of clients with an adaptive forgetting factor.

Each round the server observes a noisy cosine-similarity matrix W_t between
vectorized task models. The smoothed estimate

    psi_hat_t = a_t * psi_hat_{t-1} + (1 - a_t) * W_t        (psi_hat_0 = 0)

uses a forgetting factor a_t chosen to minimize the expected Frobenius risk
against the unobserved true similarity: a_t = sum Var / sum((psi_hat_prev -
E)^2 + Var), with block means/variances of W_t standing in for E and Var.
Since the factor depends on the clustering and vice versa, both are refined
for a fixed number of alternating iterations. Clustering itself is
agglomerative with average linkage on similarities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import DegenerateInputError, require_finite


@dataclass
class SimilarityState:
    """Smoothed similarity, last raw observation, and the factor history."""

    psi_hat: np.ndarray
    w_last: np.ndarray | None = None
    a_history: list[float] = field(default_factory=list)


@dataclass
class ClusterAssignment:
    """Cluster labels for a fixed, sorted tuple of client ids."""

    round: int
    clients: tuple[int, ...]
    labels: np.ndarray
    previous: "ClusterAssignment | None" = None

    def __post_init__(self):
        if len(self.clients) != len(self.labels):
            raise ValueError("clients and labels length mismatch")

    @property
    def num_clusters(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def members(self, cluster: int) -> frozenset[int]:
        return frozenset(c for c, l in zip(self.clients, self.labels) if l == cluster)

    def as_dict(self) -> dict[int, int]:
        return {c: int(l) for c, l in zip(self.clients, self.labels)}


def similarity_matrix(vectors: np.ndarray | list[np.ndarray]) -> np.ndarray:
    """Symmetric cosine-similarity matrix with unit diagonal."""
    X = np.asarray([np.asarray(v, dtype=np.float64).ravel() for v in vectors])
    if X.shape[0] < 2:
        raise ValueError("need at least two clients")
    require_finite(X, "task-model vectors")
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInputError("zero task-model vector has no direction")
    W = np.clip((X @ X.T) / np.outer(norms, norms), -1.0, 1.0)
    W = 0.5 * (W + W.T)
    np.fill_diagonal(W, 1.0)
    return W


def smooth(psi_prev: np.ndarray, w_t: np.ndarray, a_t: float) -> np.ndarray:
    """a_t * psi_prev + (1 - a_t) * w_t."""
    if not (0.0 <= a_t <= 1.0):
        raise ValueError("forgetting factor must lie in [0, 1]")
    if psi_prev.shape != w_t.shape:
        raise ValueError("shape mismatch")
    return a_t * psi_prev + (1.0 - a_t) * w_t


def estimate_moments(w_t: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Blockwise mean/variance estimates of the similarity entries.

    Intra-cluster entries share the mean of that cluster's off-diagonal
    block; entries between clusters c and d share the mean of the c x d
    block. Variances are sample variances over the same index sets (zero
    when fewer than two entries). The diagonal is self-similarity: E = 1,
    Var = 0. Singleton clusters have no off-diagonal intra entries, so the
    same convention applies to them implicitly.
    """
    K = w_t.shape[0]
    if labels.shape[0] != K:
        raise ValueError("assignment does not cover the similarity matrix")
    E = np.ones((K, K))
    V = np.zeros((K, K))
    clusters = [np.flatnonzero(labels == c) for c in np.unique(labels)]

    def sample_var(vals: np.ndarray) -> float:
        # exact zero for constant sets, not accumulated rounding dust
        if vals.size < 2 or np.all(vals == vals[0]):
            return 0.0
        return float(vals.var(ddof=1))

    for ci, idx_c in enumerate(clusters):
        if len(idx_c) >= 2:
            block = w_t[np.ix_(idx_c, idx_c)]
            off = block[~np.eye(len(idx_c), dtype=bool)]
            E[np.ix_(idx_c, idx_c)] = off.mean()
            V[np.ix_(idx_c, idx_c)] = sample_var(off)
        for idx_d in clusters[ci + 1:]:
            block = w_t[np.ix_(idx_c, idx_d)].ravel()
            mean = block.mean()
            var = sample_var(block)
            for a, b in ((idx_c, idx_d), (idx_d, idx_c)):
                E[np.ix_(a, b)] = mean
                V[np.ix_(a, b)] = var
    np.fill_diagonal(E, 1.0)
    np.fill_diagonal(V, 0.0)
    return E, V


def forgetting_factor(psi_prev: np.ndarray, E: np.ndarray, V: np.ndarray) -> float:
    """Risk-minimizing mixing weight, summed over off-diagonal entries; 0/0 -> 0."""
    off = ~np.eye(psi_prev.shape[0], dtype=bool)
    num = float(V[off].sum())
    den = float(((psi_prev - E) ** 2)[off].sum()) + num
    if den <= 0.0:
        return 0.0
    return min(1.0, max(0.0, num / den))


def agglomerative(sim: np.ndarray, num_clusters: int) -> np.ndarray:
    """Average-linkage agglomeration on a similarity matrix.

    Starts from singletons and repeatedly merges the pair of clusters with
    the highest mean inter-cluster similarity until `num_clusters` remain.
    Ties break on the lowest (row, col) index pair, which argmax's row-major
    scan gives for free. Returned labels are 0..C-1 in order of each
    cluster's smallest member.
    """
    K = sim.shape[0]
    if not (1 <= num_clusters <= K):
        raise ValueError("cluster count out of range")
    members: list[list[int]] = [[i] for i in range(K)]
    sizes = np.ones(K)
    A = sim.astype(np.float64).copy()
    np.fill_diagonal(A, -np.inf)
    while len(members) > num_clusters:
        i, j = np.unravel_index(int(np.argmax(A)), A.shape)
        if i > j:
            i, j = j, i
        # Lance-Williams for average linkage: merged row is the size-weighted mean
        merged = (sizes[i] * A[i] + sizes[j] * A[j]) / (sizes[i] + sizes[j])
        A[i], A[:, i] = merged, merged
        A[i, i] = -np.inf
        A = np.delete(np.delete(A, j, axis=0), j, axis=1)
        sizes[i] += sizes[j]
        sizes = np.delete(sizes, j)
        members[i].extend(members[j])
        del members[j]
    order = sorted(range(len(members)), key=lambda c: min(members[c]))
    labels = np.zeros(K, dtype=np.int64)
    for new_id, c in enumerate(order):
        labels[members[c]] = new_id
    return labels


def affect_iterate(psi_prev: np.ndarray, w_t: np.ndarray, num_clusters: int,
                   max_iters: int = 5) -> tuple[np.ndarray, float, np.ndarray]:
    """Alternate clustering, moment estimation, and factor updates.

    Iteration 1 clusters the raw observation (factor seeded at 0); each
    iteration then re-smooths with the refreshed factor. Returns the final
    smoothed matrix, factor, and labels. With psi_prev = 0 this reduces to
    psi_1 = (1 - a_1) * W_1.
    """
    if max_iters < 1:
        raise ValueError("need at least one iteration")
    require_finite(w_t, "similarity matrix")
    psi_cur = w_t.copy()
    a_t = 0.0
    labels = None
    for _ in range(max_iters):
        labels = agglomerative(psi_cur, num_clusters)
        E, V = estimate_moments(w_t, labels)
        a_t = forgetting_factor(psi_prev, E, V)
        psi_cur = smooth(psi_prev, w_t, a_t)
    return psi_cur, a_t, labels


def wcss(vectors: np.ndarray, labels: np.ndarray) -> float:
    """Within-cluster sum of squared distances to cluster centroids."""
    total = 0.0
    for c in np.unique(labels):
        pts = vectors[labels == c]
        total += float(np.sum((pts - pts.mean(axis=0)) ** 2))
    return total


def silhouette_score(vectors: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette over samples (Euclidean); singletons score 0.

    With a single cluster there is no neighboring cluster, so the score is
    defined as 0.
    """
    uniq = np.unique(labels)
    if len(uniq) < 2:
        return 0.0
    diff = vectors[:, None, :] - vectors[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    scores = np.zeros(len(vectors))
    for i in range(len(vectors)):
        own = labels[i]
        mask_own = (labels == own)
        if mask_own.sum() == 1:
            scores[i] = 0.0
            continue
        a = dist[i][mask_own & (np.arange(len(vectors)) != i)].mean()
        b = min(dist[i][labels == c].mean() for c in uniq if c != own)
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def estimate_cluster_count(vectors: np.ndarray, c_range) -> tuple[int, int, dict]:
    """Elbow (max second difference of WCSS) and max-silhouette cluster counts.

    Returns (elbow_C, silhouette_C, curves) where curves maps
    'num_clusters'/'wcss'/'silhouette' to aligned lists. The elbow needs at
    least three consecutive candidate counts.
    """
    c_list = sorted(set(int(c) for c in c_range))
    K = vectors.shape[0]
    if not c_list or c_list[0] < 1 or c_list[-1] > K:
        raise ValueError("cluster-count range out of bounds")
    if len(c_list) < 3:
        raise ValueError("elbow needs at least three candidate counts")
    sim = similarity_matrix(vectors)
    wcss_vals, sil_vals = [], []
    for c in c_list:
        labels = agglomerative(sim, c)
        wcss_vals.append(wcss(vectors, labels))
        sil_vals.append(silhouette_score(vectors, labels))
    second_diff = [wcss_vals[i - 1] - 2.0 * wcss_vals[i] + wcss_vals[i + 1]
                   for i in range(1, len(c_list) - 1)]
    elbow_c = c_list[1 + int(np.argmax(second_diff))]
    sil_c = c_list[int(np.argmax(sil_vals))]
    curves = {"num_clusters": c_list, "wcss": wcss_vals, "silhouette": sil_vals}
    return elbow_c, sil_c, curves
