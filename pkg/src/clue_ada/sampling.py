"""Batch label-acquisition strategies behind a single interface.

Every strategy consumes an AcquisitionRequest describing the current
unlabeled target pool and returns exactly `budget` pairwise-distinct global
indices, deterministically under the request's rng_seed. Ties in any
ranking break toward the lower global index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterConfig, ClusterState, kmeanspp_init_indices, nearest_to_centroids, weighted_kmeans
from .numerics import as_matrix
from .uncertainty import WEIGHT_KINDS, entropy_rows, margin_rows, targetness, uncertainty_weights

__all__ = [
    "STRATEGIES",
    "AcquisitionRequest",
    "StrategyConfig",
    "badge_gradient_embeddings",
    "select",
    "select_aada",
    "select_badge",
    "select_clue",
    "select_clue_with_state",
    "select_coreset",
    "select_entropy",
    "select_margin",
    "select_uniform",
]

STRATEGIES = ("clue", "uniform", "entropy", "margin", "coreset", "badge", "aada")

_AADA_EPS = 1e-8


@dataclass(frozen=True)
class StrategyConfig:
    name: str = "clue"
    temperature: float = 1.0
    clue_weight_kind: str = "entropy"
    aada_top_fraction: float = 0.02

    def __post_init__(self):
        if self.name not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.name!r}; expected one of {STRATEGIES}")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if self.clue_weight_kind not in WEIGHT_KINDS:
            raise ValueError(f"unknown clue_weight_kind {self.clue_weight_kind!r}")
        if not 0 < self.aada_top_fraction <= 1:
            raise ValueError("aada_top_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class AcquisitionRequest:
    """Unlabeled-pool snapshot a strategy selects from.

    Matrix rows are aligned with `unlabeled_indices`; `probs` must already
    be at the strategy's temperature (the caller applies it to the logits).
    """

    budget: int
    embeddings: np.ndarray
    probs: np.ndarray
    logits: np.ndarray
    unlabeled_indices: np.ndarray
    rng_seed: int = 0

    def __post_init__(self):
        emb = as_matrix(self.embeddings)
        probs = as_matrix(self.probs)
        logits = as_matrix(self.logits)
        idx = np.asarray(self.unlabeled_indices, dtype=np.int64)
        n = idx.shape[0]
        if len(set(idx.tolist())) != n:
            raise ValueError("unlabeled_indices contains duplicates")
        if emb.shape[0] != n or probs.shape[0] != n or logits.shape[0] != n:
            raise ValueError("matrices must be row-aligned with unlabeled_indices")
        if not 1 <= self.budget <= n:
            raise ValueError(f"budget {self.budget} out of range for pool of {n}")
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "unlabeled_indices", idx)


def _by_global(req: AcquisitionRequest):
    """Rows reordered so position order equals ascending global index."""
    order = np.argsort(req.unlabeled_indices, kind="stable")
    return (
        req.embeddings[order],
        req.probs[order],
        req.unlabeled_indices[order],
    )


def _finish(selection, req: AcquisitionRequest) -> list[int]:
    out = [int(i) for i in selection]
    pool = set(req.unlabeled_indices.tolist())
    if len(out) != req.budget or len(set(out)) != req.budget or not set(out) <= pool:
        raise AssertionError("strategy produced an invalid selection")
    return out


def select_clue_with_state(req: AcquisitionRequest, cfg: StrategyConfig) -> tuple[list[int], ClusterState]:
    """Uncertainty-weighted clustering selection, plus the cluster state for auditing."""
    emb, probs, global_idx = _by_global(req)
    weights = uncertainty_weights(probs, cfg.clue_weight_kind)
    state = weighted_kmeans(emb, weights, ClusterConfig(k=req.budget, seed=req.rng_seed))
    rows = nearest_to_centroids(state, emb, range(emb.shape[0]))
    return _finish(global_idx[rows], req), state


def select_clue(req: AcquisitionRequest, cfg: StrategyConfig) -> list[int]:
    return select_clue_with_state(req, cfg)[0]


def select_entropy(req: AcquisitionRequest) -> list[int]:
    """Top-budget rows by predictive entropy."""
    _, probs, global_idx = _by_global(req)
    h = entropy_rows(probs)
    order = np.lexsort((global_idx, -h))
    return _finish(global_idx[order[: req.budget]], req)


def select_margin(req: AcquisitionRequest) -> list[int]:
    """Bottom-budget rows by top-2 prediction margin."""
    _, probs, global_idx = _by_global(req)
    m = margin_rows(probs)
    order = np.lexsort((global_idx, m))
    return _finish(global_idx[order[: req.budget]], req)


def select_coreset(req: AcquisitionRequest, labeled_embeddings=None) -> list[int]:
    """Greedy K-Center: each pick maximizes distance to current coverage.

    Coverage starts as the labeled set; with no labeled points the first
    pick is the point farthest from the pool mean.
    """
    emb, _, global_idx = _by_global(req)
    n = emb.shape[0]
    selected_rows: list[int] = []

    if labeled_embeddings is not None and as_matrix(labeled_embeddings).shape[0] > 0:
        labeled = as_matrix(labeled_embeddings)
        diff = emb[:, None, :] - labeled[None, :, :]
        min_d2 = np.einsum("ijk,ijk->ij", diff, diff).min(axis=1)
    else:
        diff = emb - emb.mean(axis=0)
        to_mean = np.einsum("ij,ij->i", diff, diff)
        first = int(np.argmax(to_mean))
        selected_rows.append(first)
        diff = emb - emb[first]
        min_d2 = np.einsum("ij,ij->i", diff, diff)

    while len(selected_rows) < req.budget:
        masked = min_d2.copy()
        masked[selected_rows] = -np.inf
        pick = int(np.argmax(masked))
        selected_rows.append(pick)
        diff = emb - emb[pick]
        min_d2 = np.minimum(min_d2, np.einsum("ij,ij->i", diff, diff))

    return _finish(global_idx[selected_rows], req)


def badge_gradient_embeddings(probs, embeddings) -> np.ndarray:
    """Cross-entropy gradient wrt classifier weights under the pseudo-label.

    For each row with pseudo-label y = argmax p, the gradient block for
    class c is (p_c - [c == y]) * phi(x); blocks are concatenated
    class-major into a row of length C*D.
    """
    p = as_matrix(probs)
    emb = as_matrix(embeddings)
    if p.shape[0] != emb.shape[0]:
        raise ValueError("probs and embeddings must be row-aligned")
    n, c = p.shape
    coeff = p.copy()
    coeff[np.arange(n), p.argmax(axis=1)] -= 1.0
    return (coeff[:, :, None] * emb[:, None, :]).reshape(n, c * emb.shape[1])


def select_badge(req: AcquisitionRequest) -> list[int]:
    """KMeans++ seeding over gradient embeddings; the seeds are the batch.

    The first seed is drawn proportional to squared gradient norm, later
    seeds by the usual squared-distance rule with uniform weights.
    """
    emb, probs, global_idx = _by_global(req)
    grads = badge_gradient_embeddings(probs, emb)
    sq_norms = np.einsum("ij,ij->i", grads, grads)
    rng = np.random.default_rng(req.rng_seed)
    rows = kmeanspp_init_indices(
        grads, np.ones(grads.shape[0]), req.budget, rng, first_probs=sq_norms
    )
    return _finish(global_idx[rows], req)


def select_aada(req: AcquisitionRequest, cfg: StrategyConfig) -> list[int]:
    """Importance-weighted scoring with random draw from the top fraction.

    The domain probability comes from the implicit entropy-threshold
    classifier (targetness) rather than a trained discriminator; the score
    is targetness/(1 - targetness + eps) * entropy.
    """
    _, probs, global_idx = _by_global(req)
    n = probs.shape[0]
    t = targetness(probs, probs.shape[1])
    h = entropy_rows(probs)
    score = (t / (1.0 - t + _AADA_EPS)) * h
    n_cand = min(n, int(np.ceil(max(req.budget, cfg.aada_top_fraction * n))))
    order = np.lexsort((global_idx, -score))
    candidates = global_idx[order[:n_cand]]
    rng = np.random.default_rng(req.rng_seed)
    return _finish(rng.choice(candidates, size=req.budget, replace=False), req)


def select_uniform(req: AcquisitionRequest) -> list[int]:
    """Budget-sized uniform draw without replacement."""
    _, _, global_idx = _by_global(req)
    rng = np.random.default_rng(req.rng_seed)
    return _finish(rng.choice(global_idx, size=req.budget, replace=False), req)


def select(req: AcquisitionRequest, cfg: StrategyConfig, labeled_embeddings=None) -> list[int]:
    """Dispatch on cfg.name; `labeled_embeddings` is only used by coreset."""
    if cfg.name == "clue":
        return select_clue(req, cfg)
    if cfg.name == "uniform":
        return select_uniform(req)
    if cfg.name == "entropy":
        return select_entropy(req)
    if cfg.name == "margin":
        return select_margin(req)
    if cfg.name == "coreset":
        return select_coreset(req, labeled_embeddings)
    if cfg.name == "badge":
        return select_badge(req)
    if cfg.name == "aada":
        return select_aada(req, cfg)
    raise ValueError(f"unknown strategy {cfg.name!r}")
