"""Deterministic numeric primitives shared by the whole package.

Everything is float64. Probability vectors are plain ndarrays whose
entries are nonnegative and sum to 1 within 1e-6; matrices are row-major
2-D ndarrays. No wrapper classes: validation happens at the boundaries
that need it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .kernels import select_k
from .rng import RngStream

CE_FLOOR = 1e-12


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax of a 1-D logit vector (max subtraction)."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_rows(Z: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax of a 2-D logit array."""
    Z = np.asarray(Z, dtype=np.float64)
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def cross_entropy(p: np.ndarray, label: int) -> float:
    """-log p[label], floored at CE_FLOOR so the result is always finite."""
    p = np.asarray(p, dtype=np.float64)
    if not 0 <= label < p.shape[0]:
        raise ContractError(f"label {label} out of range for {p.shape[0]} classes")
    return float(-np.log(max(p[label], CE_FLOOR)))


def sample_beta(alpha: float, beta: float, rng: RngStream) -> float:
    if alpha <= 0 or beta <= 0:
        raise ContractError(f"beta parameters must be positive, got ({alpha}, {beta})")
    return float(rng.beta(alpha, beta))


def weighted_sample_without_replacement(weights, k: int, rng: RngStream) -> np.ndarray:
    """k distinct indices, each successive draw proportional to the
    remaining weights. Zero-weight indices are never returned."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1:
        raise ContractError("weights must be a 1-D vector")
    if np.any(w < 0):
        raise ContractError("weights must be nonnegative")
    positive = int((w > 0).sum())
    if k > positive:
        raise ContractError(f"k={k} exceeds the {positive} strictly positive weights")
    if k == 0:
        return np.empty(0, dtype=np.int64)
    U = rng.uniform((1, k))
    return select_k(w, U)[0]


@dataclass
class KmeansResult:
    assignments: np.ndarray  # (P,) int64 cluster index per point
    centroids: np.ndarray    # (G, dim)
    inertia: float           # sum of squared distances to assigned centroid
    iterations: int


def _plusplus_seed(X: np.ndarray, G: int, rng: RngStream) -> np.ndarray:
    P = X.shape[0]
    centroids = np.empty((G, X.shape[1]))
    first = min(int(rng.uniform() * P), P - 1)
    centroids[0] = X[first]
    d2 = ((X - centroids[0]) ** 2).sum(axis=1)
    for g in range(1, G):
        total = d2.sum()
        if total <= 0.0:
            idx = min(int(rng.uniform() * P), P - 1)
        else:
            cum = np.cumsum(d2)
            t = rng.uniform() * total
            idx = min(int((cum <= t).sum()), P - 1)
        centroids[g] = X[idx]
        d2 = np.minimum(d2, ((X - centroids[g]) ** 2).sum(axis=1))
    return centroids


def kmeans(points, G: int, max_iter: int = 100, rng: RngStream | None = None) -> KmeansResult:
    """Lloyd iterations from k-means++ seeding.

    Stops when assignments stabilize or max_iter is hit. Empty clusters
    are repaired by donating the point currently farthest from its
    centroid, which keeps the inertia non-increasing (asserted each
    iteration).
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ContractError("points must be a nonempty (P, dim) array")
    P = X.shape[0]
    if G < 1 or G > P:
        raise ContractError(f"G={G} must be in [1, {P}]")
    if rng is None:
        rng = RngStream(0)

    centroids = _plusplus_seed(X, G, rng)
    prev_assign = None
    prev_inertia = np.inf
    assign = np.zeros(P, dtype=np.int64)
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1).astype(np.int64)

        counts = np.bincount(assign, minlength=G)
        for g in np.flatnonzero(counts == 0):
            # donate the globally farthest point from a cluster with >= 2 members
            dist_own = d2[np.arange(P), assign]
            eligible = counts[assign] >= 2
            if not eligible.any():
                break
            donor = int(np.flatnonzero(eligible)[dist_own[eligible].argmax()])
            counts[assign[donor]] -= 1
            assign[donor] = g
            counts[g] = 1

        for g in range(G):
            mask = assign == g
            if mask.any():
                centroids[g] = X[mask].mean(axis=0)
        inertia = float(((X - centroids[assign]) ** 2).sum())
        assert inertia <= prev_inertia + 1e-9 * max(1.0, abs(prev_inertia)), (
            "k-means inertia increased"
        )
        prev_inertia = inertia
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        prev_assign = assign.copy()
    return KmeansResult(assign, centroids, prev_inertia, iterations)
