"""Command-line surface: run experiments, sweeps, and config validation.

Config files are INI-style with sections [experiment], [strategy], [model],
[data], [optimizer]. Results are written as a deterministic CSV (stable
9-significant-digit floats, LF endings) plus a JSON summary carrying the
per-round mean/std aggregate and timing.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import os
import struct
import sys
import time
from pathlib import Path

from .data import Dataset, ShiftSpec, generate_shift, load_idx
from .driver import ExperimentConfig, OptimizerConfig, aggregate, run_experiment
from .model import LossWeights
from .sampling import STRATEGIES, StrategyConfig
from .uncertainty import WEIGHT_KINDS

__all__ = ["ConfigError", "DataError", "cmd_run", "cmd_sweep", "cmd_validate", "main", "parse_config_file"]

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

THREADS_ENV = "CLUE_ADA_THREADS"


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# (type, default) per key; defaults are canonicalized like user values so an
# omitted key and an explicitly-default key hash identically.
_SCHEMA: dict[str, dict[str, tuple[str, str]]] = {
    "experiment": {
        "rounds": ("int", "10"),
        "budget": ("int", "20"),
        "train_mode": ("str", "mme"),
        "seeds": ("int_list", "0"),
        "source_epochs": ("int", "30"),
        "round0_epochs": ("int", "10"),
        "adapt_epochs": ("int", "20"),
    },
    "strategy": {
        "name": ("str", "clue"),
        "temperature": ("float", "1.0"),
        "clue_weight_kind": ("str", "entropy"),
        "aada_top_fraction": ("float", "0.02"),
    },
    "model": {
        "hidden": ("int_list", "64,64"),
        "activation": ("str", "tanh"),
        "lambda_s": ("float", "0.1"),
        "lambda_t": ("float", "1.0"),
        "lambda_h": ("float", "0.1"),
        "source_batch_size": ("int", "32"),
        "target_batch_size": ("int", "32"),
        "unlabeled_batch_size": ("int", "64"),
    },
    "optimizer": {
        "source_method": ("str", "adam"),
        "source_learning_rate": ("float", "1e-3"),
        "source_weight_decay": ("float", "0.0"),
        "adapt_method": ("str", "adam"),
        "adapt_learning_rate": ("float", "1e-3"),
        "adapt_weight_decay": ("float", "0.0"),
    },
    "data": {
        "kind": ("str", "synthetic"),
        "generator": ("str", "gauss_mixture"),
        "num_classes": ("int", "4"),
        "n_source": ("int", "1000"),
        "n_target": ("int", "1000"),
        "rotation_degrees": ("float", "0.0"),
        "translation": ("float_list", "0,0"),
        "mean_perturbation": ("float", "0.0"),
        "noise_scale": ("float", "1.0"),
        "seed": ("int", "0"),
        "test_fraction": ("float", "0.2"),
        "source_images": ("str", ""),
        "source_labels": ("str", ""),
        "target_images": ("str", ""),
        "target_labels": ("str", ""),
    },
}


def _canon(kind: str, raw: str, where: str) -> str:
    """Parse and re-serialize a value so equivalent spellings hash the same."""
    raw = raw.strip()
    try:
        if kind == "int":
            return str(int(raw))
        if kind == "float":
            return f"{float(raw):.17g}"
        if kind == "int_list":
            values = [int(v) for v in raw.split(",") if v.strip() != ""]
            if not values:
                raise ValueError("empty list")
            return ",".join(str(v) for v in values)
        if kind == "float_list":
            values = [float(v) for v in raw.split(",") if v.strip() != ""]
            if not values:
                raise ValueError("empty list")
            return ",".join(f"{v:.17g}" for v in values)
        return raw
    except ValueError as exc:
        raise ConfigError(f"key '{where}': cannot parse {raw!r} as {kind} ({exc})") from exc


def parse_config_file(path) -> dict[str, str]:
    """Read an INI config into a normalized flat map 'section.key' -> canonical value.

    Unknown sections or keys are errors; missing keys take schema defaults.
    """
    parser = configparser.ConfigParser()
    try:
        with open(path) as f:
            parser.read_file(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"config file does not parse: {exc}") from exc

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section '{section}'")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key '{section}.{key}'")

    normalized: dict[str, str] = {}
    for section, keys in _SCHEMA.items():
        for key, (kind, default) in keys.items():
            raw = parser.get(section, key, fallback=default)
            normalized[f"{section}.{key}"] = _canon(kind, raw, f"{section}.{key}")
    # Seed order has no semantic meaning; canonicalize it away.
    seeds = sorted({int(s) for s in normalized["experiment.seeds"].split(",")})
    normalized["experiment.seeds"] = ",".join(str(s) for s in seeds)
    return normalized


def config_hash(normalized: dict[str, str]) -> str:
    h = hashlib.sha256()
    for key in sorted(normalized):
        h.update(f"{key}={normalized[key]}\n".encode())
    return h.hexdigest()[:16]


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def build_experiment_config(normalized: dict[str, str]) -> ExperimentConfig:
    g = normalized.__getitem__
    name = g("strategy.name")
    _require(name in STRATEGIES, f"key 'strategy.name': unknown strategy {name!r} (valid: {', '.join(STRATEGIES)})")
    _require(
        g("strategy.clue_weight_kind") in WEIGHT_KINDS,
        f"key 'strategy.clue_weight_kind': expected one of {', '.join(WEIGHT_KINDS)}",
    )
    try:
        strategy = StrategyConfig(
            name=name,
            temperature=float(g("strategy.temperature")),
            clue_weight_kind=g("strategy.clue_weight_kind"),
            aada_top_fraction=float(g("strategy.aada_top_fraction")),
        )
        return ExperimentConfig(
            rounds=int(g("experiment.rounds")),
            budget=int(g("experiment.budget")),
            strategy=strategy,
            loss_weights=LossWeights(
                lambda_s=float(g("model.lambda_s")),
                lambda_t=float(g("model.lambda_t")),
                lambda_h=float(g("model.lambda_h")),
            ),
            train_mode=g("experiment.train_mode"),
            seeds=tuple(int(s) for s in g("experiment.seeds").split(",")),
            hidden=tuple(int(v) for v in g("model.hidden").split(",")),
            activation=g("model.activation"),
            source_epochs=int(g("experiment.source_epochs")),
            round0_epochs=int(g("experiment.round0_epochs")),
            adapt_epochs=int(g("experiment.adapt_epochs")),
            source_optimizer=OptimizerConfig(
                method=g("optimizer.source_method"),
                learning_rate=float(g("optimizer.source_learning_rate")),
                weight_decay=float(g("optimizer.source_weight_decay")),
            ),
            adapt_optimizer=OptimizerConfig(
                method=g("optimizer.adapt_method"),
                learning_rate=float(g("optimizer.adapt_learning_rate")),
                weight_decay=float(g("optimizer.adapt_weight_decay")),
            ),
            source_batch_size=int(g("model.source_batch_size")),
            target_batch_size=int(g("model.target_batch_size")),
            unlabeled_batch_size=int(g("model.unlabeled_batch_size")),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _idx_count(path: str) -> int:
    try:
        with open(path, "rb") as f:
            header = f.read(8)
    except OSError as exc:
        raise DataError(f"cannot read dataset file {path}: {exc}") from exc
    if len(header) < 8:
        raise DataError(f"{path}: truncated IDX header")
    return struct.unpack(">i", header[4:8])[0]


def _target_pool_size(normalized: dict[str, str]) -> int:
    if normalized["data.kind"] == "synthetic":
        n_target = int(normalized["data.n_target"])
    else:
        n_target = _idx_count(normalized["data.target_images"])
    test_fraction = float(normalized["data.test_fraction"])
    return n_target - int(round(test_fraction * n_target))


def validate_semantics(normalized: dict[str, str]) -> ExperimentConfig:
    """Cross-field checks beyond per-key parsing; returns the built config."""
    cfg = build_experiment_config(normalized)
    kind = normalized["data.kind"]
    _require(kind in ("synthetic", "idx"), f"key 'data.kind': expected 'synthetic' or 'idx', got {kind!r}")
    if kind == "idx":
        for k in ("source_images", "source_labels", "target_images", "target_labels"):
            _require(normalized[f"data.{k}"] != "", f"key 'data.{k}': required when data.kind=idx")
    else:
        _build_shift_spec(normalized)  # raises ConfigError on bad fields
    pool = _target_pool_size(normalized)
    if cfg.budget > pool:
        raise ConfigError(f"key 'experiment.budget': budget {cfg.budget} exceeds target-train pool of {pool}")
    if cfg.rounds * cfg.budget > pool:
        raise ConfigError(
            f"key 'experiment.rounds': total budget {cfg.rounds * cfg.budget} exceeds target-train pool of {pool}"
        )
    return cfg


def _build_shift_spec(normalized: dict[str, str]) -> ShiftSpec:
    translation = tuple(float(v) for v in normalized["data.translation"].split(","))
    if len(translation) != 2:
        raise ConfigError("key 'data.translation': expected two comma-separated values")
    try:
        return ShiftSpec(
            generator=normalized["data.generator"],
            num_classes=int(normalized["data.num_classes"]),
            n_source=int(normalized["data.n_source"]),
            n_target=int(normalized["data.n_target"]),
            rotation=math.radians(float(normalized["data.rotation_degrees"])),
            translation=translation,
            mean_perturbation=float(normalized["data.mean_perturbation"]),
            noise_scale=float(normalized["data.noise_scale"]),
            seed=int(normalized["data.seed"]),
            test_fraction=float(normalized["data.test_fraction"]),
        )
    except ValueError as exc:
        raise ConfigError(f"section 'data': {exc}") from exc


def build_datasets(normalized: dict[str, str]) -> tuple[Dataset, Dataset, Dataset]:
    if normalized["data.kind"] == "synthetic":
        return generate_shift(_build_shift_spec(normalized))

    import numpy as np

    try:
        source = load_idx(normalized["data.source_images"], normalized["data.source_labels"])
        target = load_idx(normalized["data.target_images"], normalized["data.target_labels"])
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    num_classes = max(source.num_classes, target.num_classes)
    source = Dataset(source.features, source.labels, num_classes)
    rng = np.random.default_rng(int(normalized["data.seed"]))
    order = rng.permutation(len(target))
    n_test = int(round(float(normalized["data.test_fraction"]) * len(target)))
    train_idx, test_idx = order[: len(target) - n_test], order[len(target) - n_test :]
    target_train = Dataset(target.features[train_idx], target.labels[train_idx], num_classes)
    target_test = Dataset(target.features[test_idx], target.labels[test_idx], num_classes)
    return source, target_train, target_test


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def write_results_csv(path, normalized: dict[str, str], traces) -> None:
    """Deterministic results file: identical bytes for identical config and data."""
    lines = [
        f"# config_hash={config_hash(normalized)}",
        f"# seeds={normalized['experiment.seeds']}",
        f"# strategy={normalized['strategy.name']}",
        "seed,round,labels_used,accuracy,mean_entropy",
    ]
    for trace in traces:
        for rec in trace:
            lines.append(
                f"{rec.seed},{rec.round_index},{rec.cumulative_labels},"
                f"{_fmt(rec.accuracy)},{_fmt(rec.mean_target_entropy)}"
            )
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")


def write_summary_json(path, normalized: dict[str, str], traces, wall_s: float) -> None:
    summary = {
        "config_hash": config_hash(normalized),
        "strategy": normalized["strategy.name"],
        "rounds": aggregate(traces),
        "seeds": [int(s) for s in normalized["experiment.seeds"].split(",")],
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "wall_seconds": round(wall_s, 3),
    }
    with open(path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")


def _apply_overrides(normalized: dict[str, str], seed_override: str | None) -> dict[str, str]:
    if seed_override is None:
        return normalized
    out = dict(normalized)
    out["experiment.seeds"] = _canon("int_list", seed_override, "seed-override")
    seeds = sorted({int(s) for s in out["experiment.seeds"].split(",")})
    out["experiment.seeds"] = ",".join(str(s) for s in seeds)
    return out


def _resolve_threads(threads: int | None) -> int:
    if threads is not None:
        return max(1, threads)
    env = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def cmd_run(config_path, out_path, seed_override: str | None = None, threads: int | None = None) -> int:
    try:
        normalized = _apply_overrides(parse_config_file(config_path), seed_override)
        cfg = validate_semantics(normalized)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA

    try:
        source, target_train, target_test = build_datasets(normalized)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA

    try:
        t0 = time.perf_counter()
        traces = run_experiment(cfg, source, target_train, target_test, threads=_resolve_threads(threads))
        wall = time.perf_counter() - t0
        out = Path(out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_results_csv(out, normalized, traces)
        write_summary_json(out.with_suffix(".json") if out.suffix else Path(str(out) + ".json"), normalized, traces, wall)
    except Exception as exc:  # noqa: BLE001 - map any failure to the runtime exit code
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _sanitize(value: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in value)


def cmd_sweep(
    config_path, grid_spec: str, out_dir, seed_override: str | None = None, threads: int | None = None
) -> int:
    try:
        base = _apply_overrides(parse_config_file(config_path), seed_override)
        if "=" not in (grid_spec or ""):
            raise ConfigError("grid must look like section.key=value1,value2,...")
        grid_key, _, raw_values = grid_spec.partition("=")
        grid_key = grid_key.strip()
        values = [v.strip() for v in raw_values.split(",") if v.strip() != ""]
        if not values:
            raise ConfigError("grid has no values")
        if grid_key not in base:
            raise ConfigError(f"unknown grid key '{grid_key}'")
        section, _, key = grid_key.partition(".")
        kind = _SCHEMA[section][key][0]
        points = []
        for value in values:
            point = dict(base)
            point[grid_key] = _canon(kind, value, grid_key)
            validate_semantics(point)
            points.append((value, point))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA

    try:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        combined = ["grid_param,value,seed,round,accuracy"]
        for value, point in points:
            cfg = validate_semantics(point)
            source, target_train, target_test = build_datasets(point)
            t0 = time.perf_counter()
            traces = run_experiment(cfg, source, target_train, target_test, threads=_resolve_threads(threads))
            wall = time.perf_counter() - t0
            stem = f"{grid_key.replace('.', '_')}_{_sanitize(value)}"
            write_results_csv(out / f"{stem}.csv", point, traces)
            write_summary_json(out / f"{stem}.json", point, traces, wall)
            for trace in traces:
                for rec in trace:
                    combined.append(f"{grid_key},{value},{rec.seed},{rec.round_index},{_fmt(rec.accuracy)}")
        with open(out / "combined.csv", "w", newline="") as f:
            f.write("\n".join(combined) + "\n")
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_validate(config_path) -> int:
    try:
        normalized = parse_config_file(config_path)
        validate_semantics(normalized)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    for key in sorted(normalized):
        print(f"{key} = {normalized[key]}")
    print(f"config_hash = {config_hash(normalized)}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="clue-ada", description="Active domain adaptation experiments")
    parser.add_argument("--seed-override", default=None, help="comma-separated seeds replacing the config's list")
    parser.add_argument("--threads", type=int, default=None, help=f"seed/grid parallelism (or ${THREADS_ENV})")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True, help="results CSV path (JSON summary written alongside)")

    p_sweep = sub.add_parser("sweep", help="run a one-dimensional config grid")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--grid", required=True, help="section.key=value1,value2,...")
    p_sweep.add_argument("--out", required=True, help="output directory")

    p_val = sub.add_parser("validate", help="check a config and print its normalized form")
    p_val.add_argument("--config", required=True)

    args = parser.parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, args.out, args.seed_override, args.threads)
    if args.command == "sweep":
        return cmd_sweep(args.config, args.grid, args.out, args.seed_override, args.threads)
    return cmd_validate(args.config)


if __name__ == "__main__":
    sys.exit(main())
