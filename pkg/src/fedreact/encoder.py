"""Stage-1 representation learning: a linear encoder trained federatedly.

The encoder is a single linear map theta: R^{dim*horizon} -> R^{embed_dim}.
Two objectives are provided: a log-sigmoid contrastive loss over
(anchor, positive, negatives) triples, and the noise-augmented linear
self-supervised loss whose population minimum factorizes the global
covariance matrix. Local updates follow time-smoothed gradient descent: a
decayed average of the last `window` projected stochastic gradients.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .numerics import project, require_finite, weighted_mean


@dataclass
class SmoothingConfig:
    """Knobs of the time-smoothed projected update."""

    window: int = 1          # w >= 1 past gradients enter each step
    decay: float = 1.0       # gamma in (0, 1]
    step: float | None = None    # eta; None -> resolved by the orchestrator
    radius_sq: float | None = None  # Gamma bounding ||theta||^2; None -> estimated

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not (0.0 < self.decay <= 1.0):
            raise ValueError("decay must lie in (0, 1]")
        if self.step is not None and self.step <= 0:
            raise ValueError("step must be positive")
        if self.radius_sq is not None and self.radius_sq <= 0:
            raise ValueError("radius_sq must be positive")


class GradientBuffer:
    """Ring of the last `window` projected gradients, newest last."""

    def __init__(self, window: int):
        self._buf: deque[tuple[int, np.ndarray]] = deque(maxlen=window)

    def push(self, round_idx: int, grad: np.ndarray) -> None:
        if self._buf and round_idx <= self._buf[-1][0]:
            raise ValueError("rounds must be pushed in increasing order")
        self._buf.append((round_idx, grad))

    def __len__(self) -> int:
        return len(self._buf)

    def newest_first(self) -> list[np.ndarray]:
        return [g for _, g in reversed(self._buf)]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x), stable for large |x|
    return np.logaddexp(0.0, x)


def _flatten(x: np.ndarray, lead: int) -> np.ndarray:
    """Collapse trailing input dims, keeping `lead` leading axes."""
    return np.ascontiguousarray(x).reshape(x.shape[:lead] + (-1,))


def encode(theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """theta @ flatten(x); accepts a single sample (d, T) or a batch (n, d, T)."""
    if x.ndim == 2 and x.shape[-1] != theta.shape[1]:
        flat = x.reshape(-1)
    elif x.ndim <= 1:
        flat = x.reshape(-1)
    else:
        flat = _flatten(x, 1)
    if flat.shape[-1] != theta.shape[1]:
        raise ValueError(f"input length {flat.shape[-1]} != encoder width {theta.shape[1]}")
    return flat @ theta.T


def contrastive_loss(theta: np.ndarray, x_ref: np.ndarray, x_pos: np.ndarray,
                     x_negs: np.ndarray) -> tuple[float, np.ndarray]:
    """Log-sigmoid contrastive loss and its exact gradient in theta.

    loss = -log sig(f(ref).f(pos)) - sum_r log sig(-f(ref).f(neg_r)),
    averaged over anchors when a batch is given. Shapes: x_ref/x_pos are
    (n, d, T) (or a single (d, T)), x_negs is (n, R, d, T) (or (R, d, T)).
    """
    single = x_ref.ndim == 2
    if single:
        x_ref, x_pos, x_negs = x_ref[None], x_pos[None], x_negs[None]
    u_ref = _flatten(x_ref, 1)            # (n, D)
    u_pos = _flatten(x_pos, 1)            # (n, D)
    u_neg = _flatten(x_negs, 2)           # (n, R, D)
    if u_neg.shape[1] < 1:
        raise ValueError("need at least one negative sample")

    z_ref = u_ref @ theta.T               # (n, dh)
    z_pos = u_pos @ theta.T
    z_neg = u_neg @ theta.T               # (n, R, dh)
    s_pos = np.sum(z_ref * z_pos, axis=1)              # (n,)
    s_neg = np.einsum("nd,nrd->nr", z_ref, z_neg)      # (n, R)

    n = u_ref.shape[0]
    loss = float(np.mean(_softplus(-s_pos) + _softplus(s_neg).sum(axis=1)))

    # d loss / d s_pos = sig(s_pos) - 1, d loss / d s_neg = sig(s_neg);
    # each score s = u_ref^T theta^T theta u_x contributes
    # theta (u_ref u_x^T + u_x u_ref^T), so the per-anchor gradients collapse
    # onto v_i = (sig(s_pos)-1) u_pos + sum_r sig(s_neg_r) u_neg_r.
    alpha_pos = _sigmoid(s_pos) - 1.0                  # (n,)
    alpha_neg = _sigmoid(s_neg)                        # (n, R)
    v = alpha_pos[:, None] * u_pos + np.einsum("nr,nrD->nD", alpha_neg, u_neg)
    grad = theta @ (u_ref.T @ v + v.T @ u_ref) / n
    return loss, grad


def ssl_linear_loss(theta: np.ndarray, x: np.ndarray, xi: np.ndarray,
                    xi2: np.ndarray) -> tuple[float, np.ndarray]:
    """Noise-augmented linear SSL loss and exact gradient.

    loss = -mean_i (theta x_i + xi_i)^T (theta x_i + xi'_i)
           + 0.5 ||theta^T theta||_F^2
    with x (n, D) (trailing dims flattened) and xi, xi' (n, dh).
    """
    X = _flatten(x, 1)
    n = X.shape[0]
    if n < 1:
        raise ValueError("empty batch")
    Z = X @ theta.T                                   # (n, dh)
    tt = theta @ theta.T                              # (dh, dh); ||theta^T theta||_F = ||theta theta^T||_F
    loss = float(-np.mean(np.sum((Z + xi) * (Z + xi2), axis=1))
                 + 0.5 * np.sum(tt * tt))
    grad = (-2.0 / n) * (Z.T @ X) - (1.0 / n) * ((xi + xi2).T @ X) + 2.0 * tt @ theta
    return loss, grad


def local_smoothed_update(theta: np.ndarray, buffer: GradientBuffer,
                          cfg: SmoothingConfig) -> np.ndarray:
    """One time-smoothed step: theta - (eta/W) sum_j gamma^j g_{t-j}.

    During warm-up (buffer shorter than the window) the normalizer W is
    recomputed over the terms actually available.
    """
    grads = buffer.newest_first()
    if not grads:
        raise ValueError("gradient buffer is empty")
    if cfg.step is None:
        raise ValueError("smoothing step size is unresolved")
    weights = cfg.decay ** np.arange(len(grads))
    norm = weights.sum()
    acc = np.zeros_like(theta)
    for w, g in zip(weights, grads):
        acc += w * g
    return theta - (cfg.step / norm) * acc


def fedavg_aggregate(params: list[tuple[np.ndarray, float]]) -> np.ndarray:
    """Sample-count-weighted average of client parameters."""
    if not params:
        raise ValueError("no client parameters to aggregate")
    return weighted_mean([p for p, _ in params], [n for _, n in params])


def global_mean(params: list[np.ndarray]) -> np.ndarray:
    """Unweighted mean, the aggregation used in the smoothed-descent analysis."""
    return fedavg_aggregate([(p, 1.0) for p in params])


def projected(theta: np.ndarray, cfg: SmoothingConfig) -> np.ndarray:
    """Clip to the feasible ball when a radius is configured."""
    if cfg.radius_sq is None:
        return theta
    return project(theta, cfg.radius_sq)


def save_encoder(theta: np.ndarray, path) -> None:
    """Plain-text dump: one shape header line, then row-major values."""
    with open(path, "w") as fh:
        fh.write(f"{theta.shape[0]} {theta.shape[1]}\n")
        for row in theta:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_encoder(path) -> np.ndarray:
    with open(path) as fh:
        rows, cols = (int(v) for v in fh.readline().split())
        theta = np.array([[float(v) for v in fh.readline().split()]
                          for _ in range(rows)])
    if theta.shape != (rows, cols):
        raise ValueError("encoder file shape header does not match data")
    return require_finite(theta, "encoder")
