"""Cluster-wise task-model aggregation and the two temporal combination rules.

A1 keeps a running arithmetic mean of the per-round cluster estimates; A2
mixes the history with the current estimate using the same adaptive
forgetting factor the clustering stage produced. Either rule fires for a
cluster only when its membership is unchanged from the previous round (or
on the final round), mirroring the conditional broadcast of the training
loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evocluster import ClusterAssignment
from .numerics import weighted_mean
from .taskmodel import TaskModelParams


@dataclass
class ClusterModelState:
    """Per-cluster current round estimate and temporal estimate."""

    current: TaskModelParams | None = None
    temporal: TaskModelParams | None = None
    rounds_accumulated: int = 0  # count of rounds folded into `temporal`


def cluster_weighted_average(members: list[tuple[TaskModelParams, int]]) -> TaskModelParams:
    """Sample-size-weighted mean of member task models."""
    if not members:
        raise ValueError("cannot average an empty cluster")
    first = members[0][0]
    vec = weighted_mean([m.vector for m, _ in members],
                        [float(n) for _, n in members])
    num_classes = first.weights.shape[0] if first.kind == "classification" else 0
    feature_dim = first.weights.shape[-1] if first.kind == "classification" else first.weights.shape[0]
    return TaskModelParams.from_vector(first.kind, feature_dim, vec, num_classes)


def a1_update(theta_hat: np.ndarray, theta_new: np.ndarray, t: int) -> np.ndarray:
    """Running-mean update: with t estimates already folded in, returns the
    mean of t+1. Initialization is theta_hat = first estimate with t = 1."""
    if t < 1:
        raise ValueError("round counter must be >= 1")
    return (t / (t + 1.0)) * theta_hat + (1.0 / (t + 1.0)) * theta_new


def a2_update(theta_hat: np.ndarray, theta_new: np.ndarray, a_t: float) -> np.ndarray:
    """Forgetting-factor mix: a_t * history + (1 - a_t) * current."""
    if not (0.0 <= a_t <= 1.0):
        raise ValueError("forgetting factor must lie in [0, 1]")
    return a_t * theta_hat + (1.0 - a_t) * theta_new


def broadcast_rule(assignment: ClusterAssignment, t: int, t_final: int) -> dict[int, bool]:
    """Per-cluster flag: temporal update + broadcast happen iff the cluster's
    membership is unchanged from the previous round or t is the final round.

    On the first round there is no previous assignment, so only the final-
    round disjunct can fire.
    """
    fired = {}
    for c in range(assignment.num_clusters):
        if t >= t_final:
            fired[c] = True
            continue
        prev = assignment.previous
        fired[c] = (prev is not None
                    and len(assignment.members(c)) > 0
                    and assignment.members(c) == prev.members(c))
    return fired


def apply_temporal(state: ClusterModelState, rule: str, a_t: float | None) -> TaskModelParams:
    """Fold the cluster's current estimate into its temporal estimate.

    rule is 'a1' or 'a2'. The first fired round initializes the temporal
    estimate with the current one.
    """
    if state.current is None:
        raise ValueError("no current-round estimate to fold in")
    if state.temporal is None:
        state.temporal = state.current.copy()
        state.rounds_accumulated = 1
        return state.temporal
    if rule == "a1":
        vec = a1_update(state.temporal.vector, state.current.vector,
                        state.rounds_accumulated)
        state.rounds_accumulated += 1
    elif rule == "a2":
        if a_t is None:
            raise ValueError("a2 needs the round's forgetting factor")
        vec = a2_update(state.temporal.vector, state.current.vector, a_t)
        state.rounds_accumulated += 1
    else:
        raise ValueError(f"unknown temporal rule {rule!r}")
    ref = state.current
    num_classes = ref.weights.shape[0] if ref.kind == "classification" else 0
    feature_dim = ref.weights.shape[-1] if ref.kind == "classification" else ref.weights.shape[0]
    state.temporal = TaskModelParams.from_vector(ref.kind, feature_dim, vec, num_classes)
    return state.temporal
