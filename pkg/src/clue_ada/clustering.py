"""Weighted K-Means clustering with KMeans++ seeding.

Lloyd's alternation with an uncertainty-weighted update step: Assign sends
each point to its nearest centroid by squared Euclidean distance; Update
moves each centroid to the weighted mean of its set. These steps minimize
the unnormalized weighted within-set sum

    sum_k sum_{i in X_k} h_i * ||x_i - mu_k||^2            (surrogate)

which is the quantity recorded in the iteration trace and guaranteed
non-increasing. The reported `objective` is the per-set normalized form

    sum_k (1/Z_k) sum_{i in X_k} h_i * ||x_i - mu_k||^2,   Z_k = sum h_i

i.e. the sum of weighted set variances; both values are kept on the result
since Lloyd optimizes the surrogate, not the normalized objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import as_matrix, as_vector, pairwise_sq_dists
from .uncertainty import UncertaintyWeights

__all__ = [
    "ClusterConfig",
    "ClusterState",
    "kmeanspp_init",
    "kmeanspp_init_indices",
    "weighted_kmeans",
    "set_variance",
    "weighted_set_variance",
    "nearest_to_centroids",
]


@dataclass(frozen=True)
class ClusterConfig:
    k: int
    seed: int = 0
    max_iters: int = 300
    tol: float = 1e-6
    restarts: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass(frozen=True)
class ClusterState:
    """Result of one weighted K-Means solve.

    `objective` is the normalized (sum of weighted set variances) value;
    `surrogate_objective` is the unnormalized sum Lloyd actually minimizes,
    and `objective_trace` records it after every iteration (monotone
    non-increasing).
    """

    centroids: np.ndarray
    assignment: np.ndarray
    objective: float
    surrogate_objective: float
    iterations_run: int
    objective_trace: np.ndarray = field(repr=False)


def _weight_values(weights: UncertaintyWeights | np.ndarray, n: int) -> np.ndarray:
    values = weights.values if isinstance(weights, UncertaintyWeights) else np.asarray(weights, dtype=np.float64)
    return as_vector(values, length=n)


def _normalize_probs(mass: np.ndarray) -> np.ndarray:
    total = mass.sum()
    if total <= 0:
        raise ValueError("probability mass is zero")
    return mass / total


def kmeanspp_init_indices(
    points: np.ndarray,
    weights: UncertaintyWeights | np.ndarray,
    k: int,
    rng: np.random.Generator,
    first_probs: np.ndarray | None = None,
) -> np.ndarray:
    """KMeans++ seeding; returns the k chosen row indices, pairwise distinct.

    The first seed is drawn with probability proportional to weight (or to
    `first_probs` when given); each later seed with probability proportional
    to weight times squared distance to the nearest already-chosen seed.
    When that mass vanishes (remaining candidates coincide with chosen
    seeds), falls back to a uniform draw over unchosen positive-weight rows.
    """
    pts = as_matrix(points)
    n = pts.shape[0]
    w = _weight_values(weights, n)
    usable = w > 0
    if k > int(usable.sum()):
        raise ValueError(f"k={k} exceeds {int(usable.sum())} points with positive weight")

    if first_probs is not None:
        mass = as_vector(first_probs, length=n).copy()
        if np.any(mass < 0):
            raise ValueError("first_probs must be non-negative")
        if mass.sum() <= 0:
            mass = usable.astype(np.float64)
    else:
        mass = w.copy()

    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.choice(n, p=_normalize_probs(mass))
    taken = np.zeros(n, dtype=bool)
    taken[chosen[0]] = True
    nearest_d2 = pairwise_sq_dists(pts, pts[chosen[0]][None, :])[:, 0]

    for j in range(1, k):
        mass = w * nearest_d2
        mass[taken] = 0.0
        if mass.sum() > 0:
            idx = int(rng.choice(n, p=_normalize_probs(mass)))
        else:
            candidates = np.flatnonzero(usable & ~taken)
            idx = int(rng.choice(candidates))
        chosen[j] = idx
        taken[idx] = True
        nearest_d2 = np.minimum(nearest_d2, pairwise_sq_dists(pts, pts[idx][None, :])[:, 0])
    return chosen


def kmeanspp_init(points, weights: UncertaintyWeights, cfg: ClusterConfig) -> np.ndarray:
    """KMeans++ seed matrix (k x D), deterministic given cfg.seed."""
    pts = as_matrix(points)
    rng = np.random.default_rng(cfg.seed)
    return pts[kmeanspp_init_indices(pts, weights, cfg.k, rng)].copy()


def _normalized_objective(pts, w, assignment, centroids, k) -> float:
    """Sum over sets of (1/Z_k) * sum h*d^2, with empty or zero-weight sets contributing 0."""
    total = 0.0
    for j in range(k):
        members = assignment == j
        if not members.any():
            continue
        zk = w[members].sum()
        if zk <= 0:
            continue
        diff = pts[members] - centroids[j]
        total += float((w[members] * np.einsum("ij,ij->i", diff, diff)).sum() / zk)
    return total


def _lloyd_once(pts, w, cfg: ClusterConfig, rng: np.random.Generator) -> ClusterState:
    n = pts.shape[0]
    k = cfg.k
    centroids = pts[kmeanspp_init_indices(pts, w, k, rng)].copy()
    assignment = np.zeros(n, dtype=np.int64)
    trace = []
    iterations = 0

    for _ in range(cfg.max_iters):
        iterations += 1
        d2 = pairwise_sq_dists(pts, centroids)
        assignment = d2.argmin(axis=1)
        nearest_d2 = d2[np.arange(n), assignment]

        # Empty-cluster repair: reseed at the point with the largest
        # weight * distance-to-nearest-centroid, then claim that point.
        counts = np.bincount(assignment, minlength=k)
        for j in np.flatnonzero(counts == 0):
            idx = int(np.argmax(w * nearest_d2))
            centroids[j] = pts[idx]
            assignment[idx] = j
            nearest_d2[idx] = 0.0

        new_centroids = centroids.copy()
        for j in range(k):
            members = assignment == j
            if not members.any():
                continue
            zk = w[members].sum()
            if zk > 0:
                new_centroids[j] = (w[members, None] * pts[members]).sum(axis=0) / zk
            else:
                # All-zero-weight set: weighted mean is undefined, keep the
                # centroid near its points with the plain mean.
                new_centroids[j] = pts[members].mean(axis=0)

        shift = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        centroids = new_centroids
        diff = pts - centroids[assignment]
        trace.append(float((w * np.einsum("ij,ij->i", diff, diff)).sum()))
        if shift < cfg.tol:
            break

    return ClusterState(
        centroids=centroids,
        assignment=assignment,
        objective=_normalized_objective(pts, w, assignment, centroids, k),
        surrogate_objective=trace[-1],
        iterations_run=iterations,
        objective_trace=np.asarray(trace),
    )


def weighted_kmeans(points, weights: UncertaintyWeights, cfg: ClusterConfig) -> ClusterState:
    """Weighted K-Means; returns the best result over cfg.restarts by objective."""
    pts = as_matrix(points)
    n = pts.shape[0]
    w = _weight_values(weights, n)
    if cfg.k > n:
        raise ValueError(f"k={cfg.k} exceeds {n} points")
    if not np.any(w > 0):
        raise ValueError("all weights are zero")

    best: ClusterState | None = None
    for child in np.random.SeedSequence(cfg.seed).spawn(cfg.restarts):
        state = _lloyd_once(pts, w, cfg, np.random.default_rng(child))
        # Restarts are ranked by the surrogate: it is the quantity Lloyd
        # minimizes, so its best local optimum is the meaningful winner.
        if best is None or state.surrogate_objective < best.surrogate_objective:
            best = state
    return best


def set_variance(points_in_set) -> float:
    """Mean squared deviation of a non-empty point set from its centroid."""
    pts = as_matrix(points_in_set)
    if pts.shape[0] == 0:
        raise ValueError("set is empty")
    diff = pts - pts.mean(axis=0)
    return float(np.einsum("ij,ij->i", diff, diff).mean())


def weighted_set_variance(points_in_set, weights) -> float:
    """Weight-normalized squared deviation from the weighted mean."""
    pts = as_matrix(points_in_set)
    w = _weight_values(weights, pts.shape[0])
    total = w.sum()
    if total <= 0:
        raise ValueError("total weight is zero")
    mu = (w[:, None] * pts).sum(axis=0) / total
    diff = pts - mu
    return float((w * np.einsum("ij,ij->i", diff, diff)).sum() / total)


def nearest_to_centroids(state: ClusterState, points, eligible) -> list[int]:
    """One eligible point per centroid, nearest first, pairwise distinct.

    Centroids are processed in index order and each claims its nearest
    still-unclaimed eligible point, so two centroids sharing a nearest
    neighbor never collide; ties break toward the lower point index.
    """
    pts = as_matrix(points)
    idx = np.asarray(sorted(set(int(i) for i in eligible)), dtype=np.int64)
    if idx.size == 0:
        raise ValueError("eligible set is empty")
    k = state.centroids.shape[0]
    if idx.size < k:
        raise ValueError(f"need at least {k} eligible points, got {idx.size}")

    d2 = pairwise_sq_dists(pts[idx], state.centroids)
    claimed = np.zeros(idx.size, dtype=bool)
    result = []
    for j in range(k):
        col = np.where(claimed, np.inf, d2[:, j])
        local = int(np.argmin(col))
        claimed[local] = True
        result.append(int(idx[local]))
    return result
