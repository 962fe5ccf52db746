"""Clustered-FL comparison schemes sharing the main pipeline's task models.

Snapshot clustering groups clients on the current round's similarity matrix
alone; the MMA variants aggregate cluster models memorylessly (no temporal
averaging). IFCA and FLSC move the cluster choice to the clients: each
client downloads all cluster models, picks the lowest-loss one (or the
tau lowest for FLSC), trains from it, and the server averages the returned
updates per cluster.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .aggregation import cluster_weighted_average
from .evocluster import affect_iterate, agglomerative, similarity_matrix
from .taskmodel import TaskModelParams, TrainConfig, linreg_train, svm_train, task_loss


class BaselineKind(Enum):
    SNAPSHOT = "snapshot"
    SC_MMA = "sc-mma"
    EC_MMA = "ec-mma"
    IFCA = "ifca"
    FLSC = "flsc"


@dataclass
class ClientRound:
    """One participating client's data for a task round."""

    client: int
    features: np.ndarray
    y: np.ndarray  # labels or regression targets
    size: int
    rng: np.random.Generator


def _cluster_models(task_models: list[TaskModelParams], sizes: list[int],
                    labels: np.ndarray) -> dict[int, TaskModelParams]:
    out = {}
    for c in np.unique(labels):
        members = [(task_models[i], sizes[i]) for i in np.flatnonzero(labels == c)]
        out[int(c)] = cluster_weighted_average(members)
    return out


def snapshot_cluster_round(task_models: list[TaskModelParams], sizes: list[int],
                           num_clusters: int) -> tuple[np.ndarray, dict[int, TaskModelParams]]:
    """Cluster on the current round's cosine matrix only, then average.

    Returns (labels, per-cluster models). This is also the per-round body of
    SC+MMA; the two differ only in how the orchestrator logs them.
    """
    W = similarity_matrix([m.vector for m in task_models])
    labels = agglomerative(W, num_clusters)
    return labels, _cluster_models(task_models, sizes, labels)


def sc_mma_round(task_models: list[TaskModelParams], sizes: list[int],
                 num_clusters: int) -> tuple[np.ndarray, dict[int, TaskModelParams]]:
    """Snapshot clustering + memoriless weighted averaging."""
    return snapshot_cluster_round(task_models, sizes, num_clusters)


def ec_mma_round(psi_prev: np.ndarray, task_models: list[TaskModelParams],
                 sizes: list[int], num_clusters: int, max_iters: int = 5
                 ) -> tuple[np.ndarray, float, np.ndarray, dict[int, TaskModelParams]]:
    """Evolutionary clustering + memoriless weighted averaging.

    Returns (psi_new, a_t, labels, per-cluster models). With a_t forced to 0
    (e.g. zero history and zero variance) this reduces to sc_mma_round.
    """
    W = similarity_matrix([m.vector for m in task_models])
    psi_new, a_t, labels = affect_iterate(psi_prev, W, num_clusters, max_iters)
    return psi_new, a_t, labels, _cluster_models(task_models, sizes, labels)


def _train(init: TaskModelParams, data: ClientRound, cfg: TrainConfig) -> TaskModelParams:
    if init.kind == "classification":
        return svm_train(init, data.features, data.y, cfg, data.rng)
    return linreg_train(init, data.features, data.y, cfg, data.rng)


def ifca_round(models: list[TaskModelParams], clients: list[ClientRound],
               cfg: TrainConfig) -> tuple[list[TaskModelParams], dict[int, int]]:
    """One IFCA round: clients join the lowest-loss cluster and train it.

    Returns the new cluster models (empty clusters keep their previous
    model) and each participating client's chosen cluster. Loss ties break
    toward the lowest cluster id.
    """
    updates: dict[int, list[tuple[TaskModelParams, int]]] = {c: [] for c in range(len(models))}
    chosen: dict[int, int] = {}
    for data in clients:
        losses = [task_loss(m, data.features, data.y) for m in models]
        c = int(np.argmin(losses))
        chosen[data.client] = c
        trained = _train(models[c], data, cfg)
        updates[c].append((trained, data.size))
    new_models = []
    for c, model in enumerate(models):
        new_models.append(cluster_weighted_average(updates[c]) if updates[c] else model)
    return new_models, chosen


def flsc_round(models: list[TaskModelParams], clients: list[ClientRound],
               cfg: TrainConfig, tau: int
               ) -> tuple[list[TaskModelParams], dict[int, int], dict[int, tuple[int, ...]]]:
    """One FLSC round with soft membership of the tau lowest-loss clusters.

    Each client trains from the uniform mixture of its selected models and
    its update is averaged into every selected cluster. Returns the new
    models, each client's best (lowest-loss) cluster, and the full
    selections. tau=1 reproduces ifca_round.
    """
    if not (1 <= tau <= len(models)):
        raise ValueError("tau must lie in [1, number of clusters]")
    updates: dict[int, list[tuple[TaskModelParams, int]]] = {c: [] for c in range(len(models))}
    top1: dict[int, int] = {}
    picks: dict[int, tuple[int, ...]] = {}
    ref = models[0]
    num_classes = ref.weights.shape[0] if ref.kind == "classification" else 0
    feature_dim = ref.weights.shape[-1] if ref.kind == "classification" else ref.weights.shape[0]
    for data in clients:
        losses = np.array([task_loss(m, data.features, data.y) for m in models])
        sel = tuple(int(c) for c in np.argsort(losses, kind="stable")[:tau])
        top1[data.client] = sel[0]
        picks[data.client] = sel
        mix_vec = np.mean([models[c].vector for c in sel], axis=0)
        init = TaskModelParams.from_vector(ref.kind, feature_dim, mix_vec, num_classes)
        trained = _train(init, data, cfg)
        for c in sel:
            updates[c].append((trained, data.size))
    new_models = []
    for c, model in enumerate(models):
        new_models.append(cluster_weighted_average(updates[c]) if updates[c] else model)
    return new_models, top1, picks
