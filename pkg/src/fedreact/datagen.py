"""Synthetic clustered, labeled multivariate time-series streams.

Clients belong to ground-truth clusters; each (cluster, label) pair has a
fixed mean pattern, and samples are that pattern plus Gaussian noise. Label
distributions evolve per round according to one of three drift strategies:

  s1  -- each cluster flips between a major and a minor Dirichlet
         distribution, driven by a two-state Markov chain
  s2  -- disjoint label supports per cluster; a fresh uniform-simplex draw
         per cluster per round, plus rare one-round adoption of another
         cluster's support by individual clients
  s3  -- s2-style distributions, but clients permanently migrate to another
         cluster with small probability each round

All draws are keyed by (seed, purpose, client/cluster, round), so the stream
is reproducible sample-for-sample regardless of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import require_finite, rng_stream

STRATEGIES = ("stationary", "s1", "s2", "s3")


@dataclass
class ClusterSpec:
    """Static description of one ground-truth cluster."""

    cluster_id: int
    label_support: tuple[int, ...]
    prototypes: np.ndarray  # (num_labels, dim, horizon) mean pattern per label
    noise_scale: float


@dataclass
class DriftState:
    """Mutable drift bookkeeping carried from round to round."""

    z: np.ndarray  # (C,) latent regime bit per cluster (s1)
    client_cluster: np.ndarray  # (K,) current cluster per client (s3 mutates this)
    lambda1: float
    lambda2: float
    adopt_prob: float
    migrate_prob: float


@dataclass
class Batch:
    """One client's labeled sample for a round."""

    x: np.ndarray  # (n, dim, horizon)
    labels: np.ndarray  # (n,) int class ids
    targets: np.ndarray  # (n,) float regression targets


def validate_distribution(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("not a probability vector")
    return p


def dirichlet_partition(num_labels: int, num_clusters: int, beta: float,
                        rng: np.random.Generator) -> list[np.ndarray]:
    """Allocate each label's mass across clusters via Dirichlet(beta) draws.

    Returns one normalized label distribution per cluster. Small beta
    concentrates each label on few clusters, i.e. high heterogeneity.
    """
    if beta <= 0 or num_clusters < 1:
        raise ValueError("need beta > 0 and num_clusters >= 1")
    shares = rng.dirichlet(np.full(num_clusters, beta), size=num_labels)  # (L, C)
    # every label carries equal global mass; each cluster renormalizes its slice
    mass = shares.T / num_labels  # (C, L)
    dists = []
    for c in range(num_clusters):
        row = mass[c]
        total = row.sum()
        if total <= 0:  # all-zero slice cannot occur for beta > 0, but guard anyway
            row = np.full(num_labels, 1.0 / num_labels)
            total = 1.0
        dists.append(row / total)
    return dists


def markov_step(state: DriftState, cluster: int, p_major: np.ndarray,
                p_minor: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Advance cluster's regime bit and return the distribution now in force.

    Pr(z'=1 | z=0) = lambda1, Pr(z'=1 | z=1) = lambda2.
    """
    z = int(state.z[cluster])
    p_one = state.lambda1 if z == 0 else state.lambda2
    z_new = 1 if rng.random() < p_one else 0
    state.z[cluster] = z_new
    return p_minor if z_new else p_major


def uniform_simplex(k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the (k-1)-simplex via normalized exponentials."""
    e = rng.exponential(size=k)
    return e / e.sum()


def simplex_resample(support: tuple[int, ...], adopt_prob: float,
                     other_supports: list[tuple[int, ...]], num_labels: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Uniform-simplex label distribution over own support, or (with prob
    adopt_prob) over a uniformly chosen other cluster's support."""
    if len(support) == 0:
        raise ValueError("empty label support")
    target = support
    if other_supports and adopt_prob > 0 and rng.random() < adopt_prob:
        target = other_supports[rng.integers(len(other_supports))]
    p = np.zeros(num_labels)
    p[list(target)] = uniform_simplex(len(target), rng)
    return p


def migrate_step(state: DriftState, client: int, rng: np.random.Generator) -> int:
    """With prob migrate_prob, permanently reassign the client to a uniformly
    chosen other cluster; returns the (possibly new) cluster id."""
    num_clusters = int(state.z.shape[0])
    if num_clusters < 2:
        raise ValueError("migration needs at least 2 clusters")
    if state.migrate_prob > 0 and rng.random() < state.migrate_prob:
        current = int(state.client_cluster[client])
        others = [c for c in range(num_clusters) if c != current]
        state.client_cluster[client] = others[rng.integers(len(others))]
    return int(state.client_cluster[client])


def split_supports(num_labels: int, num_clusters: int) -> list[tuple[int, ...]]:
    """Disjoint contiguous label supports, remainder going to the last cluster."""
    base = num_labels // num_clusters
    sizes = [base] * num_clusters
    sizes[-1] += num_labels - base * num_clusters
    supports, start = [], 0
    for s in sizes:
        supports.append(tuple(range(start, start + s)))
        start += s
    return supports


def client_blocks(num_clients: int, num_clusters: int) -> np.ndarray:
    """Initial client -> cluster map: contiguous blocks, remainder to the last."""
    base = num_clients // num_clusters
    sizes = [base] * num_clusters
    sizes[-1] += num_clients - base * num_clusters
    out = np.zeros(num_clients, dtype=np.int64)
    start = 0
    for c, s in enumerate(sizes):
        out[start:start + s] = c
        start += s
    return out


@dataclass
class StreamConfig:
    seed: int = 0
    num_clients: int = 30
    num_clusters: int = 3
    num_labels: int = 10
    dim: int = 6
    horizon: int = 20
    strategy: str = "stationary"
    beta: float = 0.1
    lambda1: float = 0.85
    lambda2: float = 0.15
    adopt_prob: float = 0.05
    migrate_prob: float = 0.005
    noise_scale: float = 0.8
    shared_scale: float = 1.0  # label pattern common to all clusters
    center_scale: float = 1.0
    label_scale: float = 0.45
    target_noise: float = 0.05
    data_scale: float = 1.0  # overall amplitude, used to tune covariance spectra

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not (0 <= self.lambda1 <= 1 and 0 <= self.lambda2 <= 1):
            raise ValueError("lambda1/lambda2 must lie in [0, 1]")
        if self.num_clients < 1 or self.num_clusters < 1 or self.num_labels < 1:
            raise ValueError("counts must be positive")


class SyntheticStream:
    """Deterministic per-(client, round) batch source with drift.

    Round indices start at 1; round state is evolved lazily and cached, so
    batches for any (client, round) can be requested in any order.
    """

    def __init__(self, cfg: StreamConfig):
        self.cfg = cfg
        C, L, d, T = cfg.num_clusters, cfg.num_labels, cfg.dim, cfg.horizon
        rng = rng_stream(cfg.seed, "prototypes")
        # each label has a pattern shared across clusters plus a cluster shift
        # and a cluster-specific per-label offset, so same-cluster prototypes
        # sit closer together than cross-cluster ones
        shared = rng.standard_normal((L, d, T)) * cfg.shared_scale
        centers = rng.standard_normal((C, d, T)) * cfg.center_scale
        offsets = rng.standard_normal((C, L, d, T)) * cfg.label_scale
        self.prototypes = (shared[None, :, :, :] + centers[:, None, :, :]
                           + offsets) * cfg.data_scale
        require_finite(self.prototypes, "prototypes")

        # per-cluster linear readout defining the regression target
        r = rng_stream(cfg.seed, "readout")
        v = r.standard_normal((C, d * T))
        self.readout = v / np.linalg.norm(v, axis=1, keepdims=True)

        if cfg.strategy in ("stationary", "s1"):
            self.supports = [tuple(range(L))] * C
            self.p_major = dirichlet_partition(L, C, cfg.beta, rng_stream(cfg.seed, "dirichlet-major"))
            self.p_minor = dirichlet_partition(L, C, cfg.beta, rng_stream(cfg.seed, "dirichlet-minor"))
            self.base_dists = np.array(self.p_major)
        else:
            self.supports = split_supports(L, C)
            self.p_major = self.p_minor = None
            self.base_dists = np.zeros((C, L))
            for c, sup in enumerate(self.supports):
                self.base_dists[c, list(sup)] = 1.0 / len(sup)

        self.state = DriftState(
            z=np.zeros(C, dtype=np.int64),
            client_cluster=client_blocks(cfg.num_clients, C),
            lambda1=cfg.lambda1,
            lambda2=cfg.lambda2,
            adopt_prob=cfg.adopt_prob,
            migrate_prob=cfg.migrate_prob,
        )
        # round 0 state: initial assignment, major distributions
        init_dists = np.zeros((cfg.num_clients, L))
        for k in range(cfg.num_clients):
            c = int(self.state.client_cluster[k])
            if cfg.strategy in ("stationary", "s1"):
                init_dists[k] = self.p_major[c]
            else:
                p = np.zeros(L)
                p[list(self.supports[c])] = 1.0 / len(self.supports[c])
                init_dists[k] = p
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {
            0: (self.state.client_cluster.copy(), init_dists)
        }
        self._last_round = 0

    # -- round-state evolution ------------------------------------------------

    def round_state(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """(client->cluster map, (K, L) per-client label distributions) at round t."""
        if t < 0:
            raise ValueError("round must be >= 0")
        while self._last_round < t:
            self._advance(self._last_round + 1)
        return self._cache[t]

    def _advance(self, t: int) -> None:
        cfg = self.cfg
        C, K, L = cfg.num_clusters, cfg.num_clients, cfg.num_labels

        if cfg.strategy == "s3" and C >= 2:
            for k in range(K):
                migrate_step(self.state, k, rng_stream(cfg.seed, "migrate", k, t))

        cluster_dists = np.zeros((C, L))
        for c in range(C):
            if cfg.strategy == "stationary":
                cluster_dists[c] = self.p_major[c]
            elif cfg.strategy == "s1":
                cluster_dists[c] = markov_step(
                    self.state, c, self.p_major[c], self.p_minor[c],
                    rng_stream(cfg.seed, "markov", c, t))
            else:  # s2 / s3 share the per-round simplex draw across the cluster
                p = np.zeros(L)
                sup = self.supports[c]
                p[list(sup)] = uniform_simplex(len(sup), rng_stream(cfg.seed, "simplex", c, t))
                cluster_dists[c] = p

        dists = np.zeros((K, L))
        for k in range(K):
            c = int(self.state.client_cluster[k])
            dists[k] = cluster_dists[c]
            if cfg.strategy == "s2" and cfg.adopt_prob > 0 and C >= 2:
                rng = rng_stream(cfg.seed, "adopt", k, t)
                if rng.random() < cfg.adopt_prob:
                    other = [d for d in range(C) if d != c]
                    dists[k] = simplex_resample(
                        self.supports[other[rng.integers(len(other))]],
                        0.0, [], L, rng)

        self._cache[t] = (self.state.client_cluster.copy(), dists)
        self._last_round = t

    def true_clusters(self, t: int) -> np.ndarray:
        return self.round_state(t)[0]

    # -- sampling --------------------------------------------------------------

    def _emit(self, cluster: int, p: np.ndarray, size: int,
              rng: np.random.Generator) -> Batch:
        cfg = self.cfg
        if p.sum() <= 0:
            raise ValueError("empty label support")
        labels = rng.choice(cfg.num_labels, size=size, p=p)
        x = self.prototypes[cluster, labels] + cfg.noise_scale * cfg.data_scale * \
            rng.standard_normal((size, cfg.dim, cfg.horizon))
        targets = x.reshape(size, -1) @ self.readout[cluster] / np.sqrt(cfg.dim * cfg.horizon)
        targets = targets + cfg.target_noise * rng.standard_normal(size)
        return Batch(x=x, labels=labels.astype(np.int64), targets=targets)

    def sample_batch(self, client: int, t: int, size: int) -> Batch:
        """Training batch |M_t^k| for (client, round); deterministic in (seed, client, t)."""
        if size < 1:
            raise ValueError("batch size must be >= 1")
        clusters, dists = self.round_state(t)
        return self._emit(int(clusters[client]), dists[client], size,
                          rng_stream(self.cfg.seed, "batch", client, t))

    def test_batch(self, client: int, t: int, size: int) -> Batch:
        """Held-out evaluation batch.

        Labels follow the client's cluster's base distribution (the long-run
        composition a held-out split would have), not the drifted per-round
        one, so scores are comparable across rounds.
        """
        clusters, _ = self.round_state(t)
        c = int(clusters[client])
        return self._emit(c, self.base_dists[c], size,
                          rng_stream(self.cfg.seed, "test", client, t))

    def contrastive_batch(self, client: int, t: int, n_anchor: int,
                          n_neg: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(anchors, positives, negatives) for encoder training.

        Positives are fresh noisy draws of the anchor's pattern; negative
        labels are drawn from the client's distribution conditioned on
        differing from the anchor (uniform fallback if the distribution is a
        point mass).
        """
        cfg = self.cfg
        rng = rng_stream(cfg.seed, "contrastive", client, t)
        clusters, dists = self.round_state(t)
        c = int(clusters[client])
        p = dists[client]
        anchor_labels = rng.choice(cfg.num_labels, size=n_anchor, p=p)
        neg_labels = np.zeros((n_anchor, n_neg), dtype=np.int64)
        for i, y in enumerate(anchor_labels):
            for j in range(n_neg):
                lab = int(rng.choice(cfg.num_labels, p=p))
                for _ in range(10):
                    if lab != y:
                        break
                    lab = int(rng.choice(cfg.num_labels, p=p))
                if lab == y:  # point-mass distribution: any other label
                    lab = int((y + 1 + rng.integers(cfg.num_labels - 1)) % cfg.num_labels)
                neg_labels[i, j] = lab

        def noisy(labels):
            shape = labels.shape + (cfg.dim, cfg.horizon)
            return self.prototypes[c, labels] + \
                cfg.noise_scale * cfg.data_scale * rng.standard_normal(shape)

        return noisy(anchor_labels), noisy(anchor_labels), noisy(neg_labels)

    # -- export ----------------------------------------------------------------

    def export_csv(self, path, rounds: int, batch_size: int) -> None:
        """One row per sample: client, round, label, target, flattened x."""
        import csv

        D = self.cfg.dim * self.cfg.horizon
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["client", "round", "label", "target"] +
                            [f"x{i}" for i in range(D)])
            for t in range(1, rounds + 1):
                for k in range(self.cfg.num_clients):
                    batch = self.sample_batch(k, t, batch_size)
                    flat = batch.x.reshape(len(batch.labels), -1)
                    for i in range(len(batch.labels)):
                        writer.writerow([k, t, int(batch.labels[i]),
                                         repr(float(batch.targets[i]))] +
                                        [repr(float(v)) for v in flat[i]])
