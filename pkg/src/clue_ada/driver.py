"""End-to-end active adaptation loop.

One run: train on source, optionally align to the unlabeled target via the
minimax-entropy objective, then for R rounds select a batch with the
configured strategy, reveal its labels through the oracle, and update the
model. Every round is audited into a RoundRecord; a round-0 record captures
the state before any target label is spent.
"""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Dataset, PoolState, oracle_label
from .model import (
    LossWeights,
    NetworkParams,
    OptimizerState,
    batch_entropy,
    evaluate_accuracy,
    forward,
    init_params,
    mme_loss_and_grads,
    optimizer_step,
    supervised_loss_and_grads,
)
from .numerics import softmax_rows
from .sampling import AcquisitionRequest, StrategyConfig, select, select_clue_with_state

__all__ = [
    "ExperimentConfig",
    "OptimizerConfig",
    "RoundRecord",
    "aggregate",
    "run_experiment",
    "run_single_seed",
    "trace_fingerprint",
]

TRAIN_MODES = ("finetune", "mme")


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "adam"
    learning_rate: float = 1e-3
    weight_decay: float = 0.0

    def make_state(self) -> OptimizerState:
        return OptimizerState(
            method=self.method,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    rounds: int = 10
    budget: int = 20
    strategy: StrategyConfig = StrategyConfig()
    loss_weights: LossWeights = LossWeights()
    train_mode: str = "mme"
    seeds: tuple[int, ...] = (0,)
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    source_epochs: int = 30
    round0_epochs: int = 10
    adapt_epochs: int = 20
    source_optimizer: OptimizerConfig = OptimizerConfig()
    adapt_optimizer: OptimizerConfig = OptimizerConfig(learning_rate=1e-3)
    source_batch_size: int = 32
    target_batch_size: int = 32
    unlabeled_batch_size: int = 64

    def __post_init__(self):
        if self.rounds < 1 or self.budget < 1:
            raise ValueError("rounds and budget must be >= 1")
        if self.train_mode not in TRAIN_MODES:
            raise ValueError(f"unknown train_mode {self.train_mode!r}; expected one of {TRAIN_MODES}")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if not all(w >= 1 for w in self.hidden):
            raise ValueError("hidden widths must be >= 1")
        if min(self.source_batch_size, self.target_batch_size, self.unlabeled_batch_size) < 1:
            raise ValueError("batch sizes must be >= 1")
        if min(self.source_epochs, self.round0_epochs, self.adapt_epochs) < 0:
            raise ValueError("epoch counts must be >= 0")


@dataclass(frozen=True)
class RoundRecord:
    seed: int
    round_index: int
    selected: tuple[int, ...]
    cumulative_labels: int
    accuracy: float
    mean_target_entropy: float
    clue_objective: float | None
    wall_ms: float


class _BatchCycler:
    """Endless shuffled minibatches over a fixed index set."""

    def __init__(self, indices: np.ndarray, batch_size: int, rng: np.random.Generator):
        self.indices = np.asarray(indices, dtype=np.int64)
        self.batch_size = min(batch_size, self.indices.size)
        self.rng = rng
        self._order = self.rng.permutation(self.indices)
        self._pos = 0

    def next_batch(self) -> np.ndarray:
        if self._pos + self.batch_size > self._order.size:
            self._order = self.rng.permutation(self.indices)
            self._pos = 0
        batch = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return batch


def _assert_in_range(indices: np.ndarray, n: int, what: str) -> None:
    # Leakage guard: anything touching training or selection must index the
    # train-side universe, never the held-out test split.
    if indices.size and (indices.min() < 0 or indices.max() >= n):
        raise AssertionError(f"{what} index outside the training universe")


def _selection_seed(seed: int, round_index: int) -> int:
    return int(np.random.SeedSequence([seed, 0xACDA, round_index]).generate_state(1)[0])


def _train_phase(
    cfg: ExperimentConfig,
    params: NetworkParams,
    source: Dataset,
    target_train: Dataset,
    pool: PoolState,
    mode: str,
    epochs: int,
    rng: np.random.Generator,
) -> None:
    """Run one training phase in place.

    mode "source": cross-entropy on source only. mode "finetune":
    cross-entropy on the labeled target only. mode "mme": full objective
    with the entropy term over all target-train instances.
    """
    if epochs == 0:
        return
    opt = (cfg.source_optimizer if mode == "source" else cfg.adapt_optimizer).make_state()
    labeled = pool.labeled_indices
    revealed = pool.revealed_labels
    lw = cfg.loss_weights

    if mode == "source":
        driving, drive_bs = np.arange(len(source)), cfg.source_batch_size
    elif labeled.size:
        driving, drive_bs = labeled, cfg.target_batch_size
    else:
        # Round-0 alignment: no labels yet, an epoch passes over the target pool.
        driving, drive_bs = np.arange(len(target_train)), cfg.unlabeled_batch_size

    steps_per_epoch = int(np.ceil(driving.size / drive_bs))
    source_cycler = _BatchCycler(np.arange(len(source)), cfg.source_batch_size, rng)
    labeled_cycler = _BatchCycler(labeled, cfg.target_batch_size, rng) if labeled.size else None
    entropy_cycler = (
        _BatchCycler(np.arange(len(target_train)), cfg.unlabeled_batch_size, rng) if mode == "mme" else None
    )
    label_of = dict(zip(labeled.tolist(), revealed.tolist()))

    for _ in range(epochs):
        for _ in range(steps_per_epoch):
            src_idx = source_cycler.next_batch()
            _assert_in_range(src_idx, len(source), "source batch")
            source_batch = (source.features[src_idx], source.labels[src_idx])

            target_batch = None
            if labeled_cycler is not None:
                t_idx = labeled_cycler.next_batch()
                _assert_in_range(t_idx, len(target_train), "labeled-target batch")
                t_labels = np.asarray([label_of[int(i)] for i in t_idx], dtype=np.int64)
                target_batch = (target_train.features[t_idx], t_labels)

            if mode == "mme":
                u_idx = entropy_cycler.next_batch()
                _assert_in_range(u_idx, len(target_train), "entropy batch")
                _, grads = mme_loss_and_grads(
                    params, source_batch, target_batch, target_train.features[u_idx], lw
                )
            elif mode == "finetune":
                _, grads = supervised_loss_and_grads(params, None, target_batch, lw)
            else:
                _, grads = supervised_loss_and_grads(params, source_batch, None, lw)
            optimizer_step(params, grads, opt)


def run_single_seed(
    cfg: ExperimentConfig,
    source: Dataset,
    target_train: Dataset,
    target_test: Dataset,
    seed: int,
) -> list[RoundRecord]:
    """One full run; returns the round-0 record followed by R round records."""
    if cfg.rounds * cfg.budget > len(target_train):
        raise ValueError("total budget exceeds the target-train pool")

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    params = init_params(
        source.features.shape[1], source.num_classes, tuple(cfg.hidden), cfg.activation, seed=seed
    )
    pool = PoolState(num_instances=len(target_train))
    trace: list[RoundRecord] = []

    t0 = time.perf_counter()
    _train_phase(cfg, params, source, target_train, pool, "source", cfg.source_epochs, rng)
    if cfg.train_mode == "mme":
        _train_phase(cfg, params, source, target_train, pool, "mme", cfg.round0_epochs, rng)
    trace.append(
        RoundRecord(
            seed=seed,
            round_index=0,
            selected=(),
            cumulative_labels=0,
            accuracy=evaluate_accuracy(params, target_test.features, target_test.labels),
            mean_target_entropy=float(batch_entropy(params, target_train.features).mean()),
            clue_objective=None,
            wall_ms=(time.perf_counter() - t0) * 1000.0,
        )
    )

    for round_index in range(1, cfg.rounds + 1):
        t0 = time.perf_counter()
        unlabeled = pool.unlabeled_indices
        _assert_in_range(unlabeled, len(target_train), "unlabeled pool")
        emb, logits = forward(params, target_train.features[unlabeled])
        req = AcquisitionRequest(
            budget=cfg.budget,
            embeddings=emb,
            probs=softmax_rows(logits, cfg.strategy.temperature),
            logits=logits,
            unlabeled_indices=unlabeled,
            rng_seed=_selection_seed(seed, round_index),
        )

        clue_objective = None
        if cfg.strategy.name == "clue":
            selected, state = select_clue_with_state(req, cfg.strategy)
            clue_objective = state.objective
        elif cfg.strategy.name == "coreset":
            labeled = pool.labeled_indices
            labeled_emb, _ = forward(params, target_train.features[labeled]) if labeled.size else (None, None)
            selected = select(req, cfg.strategy, labeled_embeddings=labeled_emb)
        else:
            selected = select(req, cfg.strategy)

        unlabeled_set = set(unlabeled.tolist())
        if not set(selected) <= unlabeled_set:
            raise AssertionError("strategy selected outside the unlabeled pool")
        oracle_label(pool, target_train, selected)
        if len(pool.labeled) != round_index * cfg.budget:
            raise AssertionError("budget accounting violated")

        mode = "mme" if cfg.train_mode == "mme" else "finetune"
        _train_phase(cfg, params, source, target_train, pool, mode, cfg.adapt_epochs, rng)

        trace.append(
            RoundRecord(
                seed=seed,
                round_index=round_index,
                selected=tuple(selected),
                cumulative_labels=len(pool.labeled),
                accuracy=evaluate_accuracy(params, target_test.features, target_test.labels),
                mean_target_entropy=float(batch_entropy(params, target_train.features).mean()),
                clue_objective=clue_objective,
                wall_ms=(time.perf_counter() - t0) * 1000.0,
            )
        )
    return trace


def run_experiment(
    cfg: ExperimentConfig,
    source: Dataset,
    target_train: Dataset,
    target_test: Dataset,
    threads: int = 1,
) -> list[list[RoundRecord]]:
    """Run every configured seed; returns one trace per seed, in seed order.

    Seeds are independent; `threads` > 1 runs them concurrently without
    changing any result. A seed that raises aborts only its own trace.
    """
    results: dict[int, list[RoundRecord] | Exception] = {}

    def _run(seed: int):
        try:
            results[seed] = run_single_seed(cfg, source, target_train, target_test, seed)
        except Exception as exc:  # noqa: BLE001 - a failed seed must not kill siblings
            results[seed] = exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(_run, cfg.seeds))
    else:
        for seed in cfg.seeds:
            _run(seed)

    traces = []
    for seed in cfg.seeds:
        out = results[seed]
        if isinstance(out, Exception):
            raise out
        traces.append(out)
    return traces


def aggregate(traces: list[list[RoundRecord]]) -> list[dict]:
    """Per-round mean and sample standard deviation (n-1) of accuracy across seeds."""
    if not traces:
        return []
    n_rounds = len(traces[0])
    if any(len(t) != n_rounds for t in traces):
        raise ValueError("traces have mismatched round counts")
    out = []
    for r in range(n_rounds):
        accs = np.asarray([t[r].accuracy for t in traces])
        # ptp guard: identical accuracies must report exactly 0, not the
        # rounding dust of mean subtraction.
        std = float(accs.std(ddof=1)) if accs.size > 1 and np.ptp(accs) > 0 else 0.0
        out.append(
            {
                "round": traces[0][r].round_index,
                "labels": traces[0][r].cumulative_labels,
                "acc_mean": float(accs.mean()),
                "acc_std": std,
            }
        )
    return out


def trace_fingerprint(traces: list[list[RoundRecord]]) -> str:
    """Digest of everything deterministic in a set of traces (wall time excluded)."""
    h = hashlib.sha256()
    for trace in traces:
        for rec in trace:
            h.update(
                repr(
                    (
                        rec.seed,
                        rec.round_index,
                        rec.selected,
                        rec.cumulative_labels,
                        rec.accuracy,
                        rec.mean_target_entropy,
                        rec.clue_objective,
                    )
                ).encode()
            )
    return h.hexdigest()
