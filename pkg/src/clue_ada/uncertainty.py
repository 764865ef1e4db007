"""Per-instance uncertainty scores and the entropy-derived domain classifier."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import as_matrix

__all__ = [
    "WEIGHT_KINDS",
    "UncertaintyWeights",
    "DomainnessConfig",
    "entropy_rows",
    "margin_rows",
    "targetness",
    "hard_domain_label",
    "uncertainty_weights",
]

WEIGHT_KINDS = ("entropy", "margin", "uniform")

_ROW_SUM_TOL = 1e-9


def _check_prob_rows(probs) -> np.ndarray:
    p = as_matrix(probs)
    row_sums = p.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > _ROW_SUM_TOL) or np.any(p < 0):
        raise ValueError("probability rows must be non-negative and sum to 1")
    return p


@dataclass(frozen=True)
class UncertaintyWeights:
    """Non-negative per-instance weights, tagged by how they were derived.

    kind="uniform" weights are all 1; kind="entropy" weights are bounded by
    log(C) of the distribution that produced them.
    """

    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise ValueError(f"unknown weight kind {self.kind!r}; expected one of {WEIGHT_KINDS}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("weights must be a finite non-negative 1-D array")
        if self.kind == "uniform" and not np.all(v == 1.0):
            raise ValueError("uniform weights must all equal 1")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class DomainnessConfig:
    """Threshold for the hard entropy-based domain classifier.

    Diagnostic only; the acquisition loop never consults it.
    """

    gamma: float
    num_classes: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if not 0.0 <= self.gamma <= np.log(self.num_classes):
            raise ValueError(f"gamma must lie in [0, log C]={np.log(self.num_classes):.6f}, got {self.gamma}")


def entropy_rows(probs) -> np.ndarray:
    """Predictive entropy of each probability row, with 0*log(0) := 0.

    Values lie in [0, log C]; rows must sum to 1 within 1e-9.
    """
    p = _check_prob_rows(probs)
    plogp = np.zeros_like(p)
    nz = p > 0
    plogp[nz] = p[nz] * np.log(p[nz])
    h = -plogp.sum(axis=1)
    # Rounding can leave tiny negatives on one-hot rows.
    return np.maximum(h, 0.0)


def margin_rows(probs) -> np.ndarray:
    """Difference between the two largest entries of each row, in [0, 1]."""
    p = _check_prob_rows(probs)
    if p.shape[1] < 2:
        raise ValueError("margin requires at least 2 classes")
    top2 = np.partition(p, -2, axis=1)[:, -2:]
    return top2[:, 1] - top2[:, 0]


def targetness(probs, num_classes: int) -> np.ndarray:
    """Probability of belonging to the target domain: entropy / log C, in [0, 1]."""
    p = _check_prob_rows(probs)
    if num_classes != p.shape[1]:
        raise ValueError(f"num_classes {num_classes} does not match {p.shape[1]} columns")
    return entropy_rows(p) / np.log(num_classes)


def hard_domain_label(probs, cfg: DomainnessConfig) -> np.ndarray:
    """1 where row entropy >= cfg.gamma (target-like), else 0."""
    p = _check_prob_rows(probs)
    if cfg.num_classes != p.shape[1]:
        raise ValueError(f"config num_classes {cfg.num_classes} does not match {p.shape[1]} columns")
    return (entropy_rows(p) >= cfg.gamma).astype(np.int64)


def uncertainty_weights(probs, kind: str) -> UncertaintyWeights:
    """Build per-instance weights where larger always means more uncertain.

    entropy -> H(row); margin -> 1 - margin(row); uniform -> all ones.
    """
    p = _check_prob_rows(probs)
    if kind == "entropy":
        values = entropy_rows(p)
    elif kind == "margin":
        values = 1.0 - margin_rows(p)
    elif kind == "uniform":
        values = np.ones(p.shape[0])
    else:
        raise ValueError(f"unknown weight kind {kind!r}; expected one of {WEIGHT_KINDS}")
    return UncertaintyWeights(values=values, kind=kind)
