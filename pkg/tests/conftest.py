"""Shared test helpers: finite differences, brute-force cluster oracles."""

from __future__ import annotations

import itertools

import numpy as np

from clue_ada.model import NetworkParams


def finite_diff_grads(objective, params: NetworkParams, h: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of a scalar objective wrt every parameter.

    `objective` is re-evaluated with params mutated in place; arrays come
    back in params.arrays() order.
    """
    grads = []
    for arr in params.arrays():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = objective(params)
            flat[i] = orig - h
            minus = objective(params)
            flat[i] = orig
            gflat[i] = (plus - minus) / (2 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic: list[np.ndarray], numeric: list[np.ndarray], floor: float = 1e-8) -> float:
    """Largest relative error with an absolute floor for near-zero entries."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def eq4_objective(points: np.ndarray, weights: np.ndarray, assignment: np.ndarray, k: int) -> float:
    """Normalized weighted within-set sum for a given assignment.

    Centroids are the weighted means the assignment implies; sets with zero
    total weight (or no members) contribute 0.
    """
    total = 0.0
    for j in range(k):
        members = assignment == j
        if not members.any():
            continue
        w = weights[members]
        z = w.sum()
        if z <= 0:
            continue
        mu = (w[:, None] * points[members]).sum(axis=0) / z
        diff = points[members] - mu
        total += float((w * (diff * diff).sum(axis=1)).sum() / z)
    return total


def surrogate_objective(points: np.ndarray, weights: np.ndarray, assignment: np.ndarray, k: int) -> float:
    """Unnormalized weighted within-set sum (the quantity Lloyd minimizes)."""
    total = 0.0
    for j in range(k):
        members = assignment == j
        if not members.any():
            continue
        w = weights[members]
        z = w.sum()
        if z <= 0:
            continue
        mu = (w[:, None] * points[members]).sum(axis=0) / z
        diff = points[members] - mu
        total += float((w * (diff * diff).sum(axis=1)).sum())
    return total


def brute_force_best_surrogate(points: np.ndarray, weights: np.ndarray, k: int) -> float:
    """Global minimum of the surrogate over all k^n assignments, vectorized."""
    n = points.shape[0]
    labelings = np.array(list(itertools.product(range(k), repeat=n)))
    onehot = np.eye(k)[labelings]  # (k^n, n, k)
    wz = onehot * weights[None, :, None]
    z = wz.sum(axis=1)
    sums = np.einsum("pnk,nd->pkd", wz, points)
    mus = sums / np.where(z > 0, z, 1.0)[:, :, None]
    d2 = ((points[None, :, None, :] - mus[:, None, :, :]) ** 2).sum(axis=-1)
    costs = (wz * d2).sum(axis=(1, 2))
    return float(costs.min())


def random_cluster_instance(rng, n=8, k=3, d=2, num_classes=4, noise=0.5):
    """Blob-structured points plus entropy-style weights, the solver's home turf."""
    centers = rng.normal(scale=2.0, size=(k, d))
    labels = rng.integers(0, k, size=n)
    points = centers[labels] + noise * rng.normal(size=(n, d))
    probs = rng.dirichlet(np.ones(num_classes), size=n)
    weights = -(probs * np.log(probs)).sum(axis=1)
    return points, weights


def reference_lloyd(points, initial_centroids, max_iters=300, tol=1e-6):
    """Textbook unweighted Lloyd, written independently of the library.

    Mirrors the library's empty-cluster rule (reseed at the farthest point
    from current centroids) so trajectories are comparable.
    """
    pts = np.asarray(points, dtype=np.float64)
    centroids = np.asarray(initial_centroids, dtype=np.float64).copy()
    k = centroids.shape[0]
    n = pts.shape[0]
    assignment = np.zeros(n, dtype=np.int64)
    for _ in range(max_iters):
        d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assignment = d2.argmin(axis=1)
        nearest = d2[np.arange(n), assignment]
        for j in range(k):
            if not np.any(assignment == j):
                idx = int(np.argmax(nearest))
                centroids[j] = pts[idx]
                assignment[idx] = j
                nearest[idx] = 0.0
        new_centroids = centroids.copy()
        for j in range(k):
            members = assignment == j
            if members.any():
                new_centroids[j] = pts[members].mean(axis=0)
        shift = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        centroids = new_centroids
        if shift < tol:
            break
    return centroids, assignment
