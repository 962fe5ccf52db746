"""Evaluation metrics, per-round logging, and communication accounting."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

BYTES_PER_PARAM = 8  # float64 everywhere

ROUND_COLUMNS = ("round", "rand_score", "mean_accuracy", "rmse", "a_t",
                 "participants", "cluster_sizes", "bytes_up", "bytes_down",
                 "regret_grad_sq")


@dataclass
class RoundLog:
    """One row of rounds.csv; None fields serialize as empty cells."""

    round: int
    rand_score: float | None
    mean_accuracy: float | None
    rmse: float | None
    a_t: float | None
    participants: int
    cluster_sizes: tuple[int, ...]
    bytes_up: int
    bytes_down: int
    regret_grad_sq: float | None = None

    def row(self) -> list[str]:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, (float, np.floating)):
                return repr(float(v))
            return str(v)

        return [fmt(self.round), fmt(self.rand_score), fmt(self.mean_accuracy),
                fmt(self.rmse), fmt(self.a_t), fmt(self.participants),
                ";".join(str(s) for s in self.cluster_sizes),
                fmt(self.bytes_up), fmt(self.bytes_down), fmt(self.regret_grad_sq)]


def rand_score(pred, truth) -> float:
    """Fraction of client pairs on which the partitions agree.

    Agreement means the pair is together in both partitions or separated in
    both. Fewer than two clients have no pairs; the score is then 1.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("partitions cover different client sets")
    k = pred.shape[0]
    if k < 2:
        return 1.0
    same_pred = pred[:, None] == pred[None, :]
    same_truth = truth[:, None] == truth[None, :]
    iu = np.triu_indices(k, 1)
    return float(np.mean(same_pred[iu] == same_truth[iu]))


def cluster_avg_score(per_client_scores: list[float]) -> float:
    """Mean over clients of their cluster model's score on their own test set."""
    if not per_client_scores:
        raise ValueError("no client scores")
    return float(np.mean(per_client_scores))


def regret_terms(loss_history: np.ndarray, window: int, decay: float,
                 grad_history: list[np.ndarray] | None = None
                 ) -> tuple[np.ndarray, float, float | None]:
    """Windowed decayed regret at the newest round of a loss history.

    loss_history is (t, K): rows are rounds (oldest first), columns clients.
    Returns (per-client regret, global regret, squared norm of the smoothed
    gradient) where the last entry needs grad_history, a list aligned with
    the rows holding the global mean gradient of each round.
    """
    hist = np.asarray(loss_history, dtype=np.float64)
    if hist.ndim == 1:
        hist = hist[:, None]
    t = hist.shape[0]
    if t < 1:
        raise ValueError("empty loss history")
    depth = min(window, t)
    weights = decay ** np.arange(depth)          # j = 0 is the newest round
    norm = weights.sum()
    recent = hist[::-1][:depth]                  # newest first
    local = (weights[:, None] * recent).sum(axis=0) / norm
    global_regret = float(local.mean())
    grad_sq = None
    if grad_history is not None:
        grads = grad_history[::-1][:depth]
        acc = np.zeros_like(grads[0])
        for w, g in zip(weights, grads):
            acc += w * g
        acc /= norm
        grad_sq = float(np.sum(acc * acc))
    return local, global_regret, grad_sq


def comm_round(scheme: str, participants: int, broadcast_receivers: int,
               param_len: int, num_clusters: int) -> tuple[int, int]:
    """(bytes_up, bytes_down) for one task round.

    Server-side clustering schemes send each receiver one model; loss-based
    self-assignment schemes (ifca, flsc) must ship every cluster model to
    every participant.
    """
    up = participants * param_len * BYTES_PER_PARAM
    if scheme in ("ifca", "flsc"):
        down = participants * num_clusters * param_len * BYTES_PER_PARAM
    else:
        down = broadcast_receivers * param_len * BYTES_PER_PARAM
    return up, down


def write_rounds_csv(path, logs: list[RoundLog]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROUND_COLUMNS)
        for log in logs:
            writer.writerow(log.row())


def write_summary_json(path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def summarize_rounds(logs: list[RoundLog]) -> dict:
    """Scheme-agnostic aggregate statistics over the logged task rounds."""
    rand = [l.rand_score for l in logs if l.rand_score is not None]
    acc = [l.mean_accuracy for l in logs if l.mean_accuracy is not None]
    rms = [l.rmse for l in logs if l.rmse is not None]
    half = len(logs) // 2
    rand_last_half = [l.rand_score for l in logs[half:] if l.rand_score is not None]
    out = {
        "rounds": len(logs),
        "mean_rand": float(np.mean(rand)) if rand else None,
        "mean_rand_last_half": float(np.mean(rand_last_half)) if rand_last_half else None,
        "final_rand": rand[-1] if rand else None,
        "mean_accuracy": float(np.mean(acc)) if acc else None,
        "final_accuracy": acc[-1] if acc else None,
        "mean_rmse": float(np.mean(rms)) if rms else None,
        "final_rmse": rms[-1] if rms else None,
        "bytes_up_total": int(sum(l.bytes_up for l in logs)),
        "bytes_down_total": int(sum(l.bytes_down for l in logs)),
    }
    return out
