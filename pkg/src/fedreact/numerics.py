"""Dense float64 primitives shared by every stage of the simulator.

Everything here is pure: cosine similarity, norm-ball projection, a
central-difference gradient oracle, and counter-based RNG streams keyed
by (seed, tags...) so results never depend on execution order.
"""

from __future__ import annotations

import zlib
from collections.abc import Callable, Sequence

import numpy as np


class DegenerateInputError(ValueError):
    """Raised when an operation receives input it is undefined for (e.g. a zero vector)."""


class NumericError(ArithmeticError):
    """Raised when a computation produces non-finite values."""


def as_array(values, name: str = "array") -> np.ndarray:
    """Convert to a float64 ndarray, rejecting NaN/Inf at the boundary."""
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


def require_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    """Assert all entries finite; returns the array unchanged."""
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


def rng_stream(seed: int, *tags) -> np.random.Generator:
    """Independent generator for (seed, tags...).

    Tags may be ints or short strings (strings are hashed with crc32, which is
    stable across platforms and interpreter runs). Identical keys always yield
    the identical draw sequence, so per-client/per-round streams can be pulled
    in any order by any number of workers.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            entropy.append(zlib.crc32(tag.encode("utf-8")))
        else:
            entropy.append(int(tag) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between two equal-length nonzero vectors."""
    u = as_array(u, "u").ravel()
    v = as_array(v, "v").ravel()
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine similarity undefined for zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def project(x: np.ndarray, gamma_sq: float) -> np.ndarray:
    """Project onto the ball {x : ||x||^2 <= gamma_sq} (Frobenius norm for matrices).

    Points already inside are returned untouched (same object), so repeated
    projection is exactly idempotent.
    """
    if gamma_sq <= 0:
        raise ValueError("projection radius must be positive")
    x = np.asarray(x, dtype=np.float64)
    sq = float(np.sum(x * x))
    if sq <= gamma_sq:
        return x
    return x * np.sqrt(gamma_sq / sq)


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, the oracle for gradient tests.

    Works on arrays of any shape; perturbs one coordinate at a time.
    """
    if h <= 0:
        raise ValueError("step size h must be positive")
    x = as_array(x, "x")
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError("objective returned non-finite value during differencing")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def weighted_mean(arrays: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """Weighted average of same-shape arrays; weights need not be normalized."""
    if len(arrays) == 0:
        raise ValueError("empty list")
    shape = arrays[0].shape
    total = 0.0
    acc = np.zeros(shape, dtype=np.float64)
    for arr, w in zip(arrays, weights, strict=True):
        if arr.shape != shape:
            raise ValueError(f"shape mismatch: {arr.shape} vs {shape}")
        if w < 0:
            raise ValueError("weights must be nonnegative")
        acc += w * arr
        total += w
    if total <= 0:
        raise ValueError("weights sum to zero")
    return acc / total
