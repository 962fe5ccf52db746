"""Lightweight task heads trained on encoded features.

Classification uses a one-vs-rest linear SVM (hinge loss + L2 on the
weights); regression uses a linear layer with squared loss. Both are
trained by seeded minibatch SGD so results are reproducible, and both
vectorize to a flat parameter vector for cosine-similarity clustering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import require_finite


@dataclass
class TrainConfig:
    steps: int = 500
    batch: int = 10
    lr: float = 0.05
    l2: float = 1e-4

    def __post_init__(self):
        if self.steps < 0 or self.batch < 1 or self.lr <= 0 or self.l2 < 0:
            raise ValueError("invalid training configuration")


@dataclass
class TaskModelParams:
    """Linear head parameters; `kind` is 'classification' or 'regression'."""

    kind: str
    weights: np.ndarray  # (num_classes, dh) or (dh,)
    bias: np.ndarray     # (num_classes,) or (1,)

    def copy(self) -> "TaskModelParams":
        return TaskModelParams(self.kind, self.weights.copy(), self.bias.copy())

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias.ravel()])

    @staticmethod
    def zeros(kind: str, feature_dim: int, num_classes: int = 0) -> "TaskModelParams":
        if kind == "classification":
            return TaskModelParams(kind, np.zeros((num_classes, feature_dim)),
                                   np.zeros(num_classes))
        if kind == "regression":
            return TaskModelParams(kind, np.zeros(feature_dim), np.zeros(1))
        raise ValueError(f"unknown task kind {kind!r}")

    @staticmethod
    def from_vector(kind: str, feature_dim: int, vec: np.ndarray,
                    num_classes: int = 0) -> "TaskModelParams":
        vec = np.asarray(vec, dtype=np.float64)
        if kind == "classification":
            if vec.size != num_classes * feature_dim + num_classes:
                raise ValueError("vector length does not match classifier shape")
            w = vec[: num_classes * feature_dim].reshape(num_classes, feature_dim)
            return TaskModelParams(kind, w.copy(), vec[num_classes * feature_dim:].copy())
        if kind == "regression":
            if vec.size != feature_dim + 1:
                raise ValueError("vector length does not match regressor shape")
            return TaskModelParams(kind, vec[:feature_dim].copy(), vec[feature_dim:].copy())
        raise ValueError(f"unknown task kind {kind!r}")


def _signed_targets(labels: np.ndarray, num_classes: int) -> np.ndarray:
    y = -np.ones((labels.shape[0], num_classes))
    y[np.arange(labels.shape[0]), labels] = 1.0
    return y


def svm_objective(params: TaskModelParams, features: np.ndarray,
                  labels: np.ndarray, l2: float = 0.0) -> float:
    """Mean (over samples) of the summed one-vs-rest hinge terms, plus L2."""
    y = _signed_targets(labels, params.weights.shape[0])
    scores = features @ params.weights.T + params.bias
    hinge = np.maximum(0.0, 1.0 - y * scores)
    return float(hinge.sum(axis=1).mean() + l2 * np.sum(params.weights ** 2))


def svm_train(init: TaskModelParams, features: np.ndarray, labels: np.ndarray,
              cfg: TrainConfig, rng: np.random.Generator) -> TaskModelParams:
    """One-vs-rest hinge SGD from `init`; zero steps returns init unchanged."""
    if init.kind != "classification":
        raise ValueError("svm_train needs classification params")
    n = features.shape[0]
    if n < 1:
        raise ValueError("empty training set")
    num_classes = init.weights.shape[0]
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError("label outside class range")
    W = init.weights.copy()
    b = init.bias.copy()
    y_all = _signed_targets(labels, num_classes)
    full = np.arange(n)
    for _ in range(cfg.steps):
        idx = full if cfg.batch >= n else rng.integers(0, n, size=cfg.batch)
        z = features[idx]
        y = y_all[idx]
        scores = z @ W.T + b
        viol = (1.0 - y * scores) > 0.0           # (b, C)
        coef = viol * y                            # subgradient mask
        W -= cfg.lr * (-(coef.T @ z) / len(idx) + 2.0 * cfg.l2 * W)
        b -= cfg.lr * (-coef.mean(axis=0))
    require_finite(W, "svm weights")
    return TaskModelParams("classification", W, b)


def mse_objective(params: TaskModelParams, features: np.ndarray,
                  targets: np.ndarray) -> float:
    pred = features @ params.weights + params.bias[0]
    return float(np.mean((pred - targets) ** 2))


def linreg_train(init: TaskModelParams, features: np.ndarray, targets: np.ndarray,
                 cfg: TrainConfig, rng: np.random.Generator) -> TaskModelParams:
    """Minibatch SGD on mean squared error from `init`."""
    if init.kind != "regression":
        raise ValueError("linreg_train needs regression params")
    n = features.shape[0]
    if n < 1:
        raise ValueError("empty training set")
    w = init.weights.copy()
    b = float(init.bias[0])
    full = np.arange(n)
    for _ in range(cfg.steps):
        idx = full if cfg.batch >= n else rng.integers(0, n, size=cfg.batch)
        z = features[idx]
        err = z @ w + b - targets[idx]
        w -= cfg.lr * ((2.0 / len(idx)) * (z.T @ err) + 2.0 * cfg.l2 * w)
        b -= cfg.lr * 2.0 * err.mean()
    require_finite(w, "regression weights")
    return TaskModelParams("regression", w, np.array([b]))


def predict(params: TaskModelParams, features: np.ndarray) -> np.ndarray:
    """Class ids (argmax score, ties to the lowest id) or real-valued outputs."""
    if params.kind == "classification":
        scores = features @ params.weights.T + params.bias
        return np.argmax(scores, axis=1)
    return features @ params.weights + params.bias[0]


def accuracy(params: TaskModelParams, features: np.ndarray, labels: np.ndarray) -> float:
    if features.shape[0] < 1:
        raise ValueError("empty evaluation set")
    return float(np.mean(predict(params, features) == labels))


def rmse(params: TaskModelParams, features: np.ndarray, targets: np.ndarray) -> float:
    if features.shape[0] < 1:
        raise ValueError("empty evaluation set")
    return float(np.sqrt(np.mean((predict(params, features) - targets) ** 2)))


def task_loss(params: TaskModelParams, features: np.ndarray, y: np.ndarray) -> float:
    """Data-fit loss used by loss-based cluster selection (no regularizer)."""
    if params.kind == "classification":
        return svm_objective(params, features, y, l2=0.0)
    return mse_objective(params, features, y)
