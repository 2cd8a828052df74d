"""Command line: ``train``, ``eval``, ``sweep`` and ``plot-data``.

Config and sweep files are plain ``key = value`` lines; ``#`` starts a
comment.  Sweep files mark grid axes as ``grid.<key> = v1, v2, ...``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import itertools
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .ensemble import Ensemble
from .evaluator import DEFAULT_KS, Metrics, TiePolicy, evaluate, write_metrics_json, write_rank_csv
from .kb import DataError, Dataset, Vocabulary, expand_queries, load_dataset
from .model import load_checkpoint, read_checkpoint_header, save_checkpoint
from .trainer import TrainConfig, fit

log = logging.getLogger("distmult_kbc")

KEY_ALIASES = {"N": "dim", "b": "batch_size", "M": "negatives", "lr": "learning_rate"}
_INT_KEYS = {"dim", "batch_size", "negatives", "max_epochs", "patience", "eval_every", "valid_sample", "seed"}
_FLOAT_KEYS = {"learning_rate", "l2", "adam_beta1", "adam_beta2", "adam_epsilon"}
_OPTIONAL_KEYS = {"patience", "valid_sample"}
GRID_KEYS = ("dim", "batch_size", "negatives")
SWEEP_COLUMNS = ["N", "b", "M", "H1", "H10", "MRR", "MR", "epochs", "wall_seconds"]
PLOT_X = {"b", "N", "M"}
PLOT_Y = {"H1", "H10", "MRR", "MR"}


class ConfigError(ValueError):
    pass


def parse_value(key: str, text: str, source: str = "<config>"):
    key = KEY_ALIASES.get(key, key)
    text = text.strip()
    if key in _OPTIONAL_KEYS and text.lower() in ("none", ""):
        return None
    try:
        if key in _INT_KEYS:
            return int(text)
        if key in _FLOAT_KEYS:
            return float(text)
    except ValueError:
        raise ConfigError(f"{source}: bad value {text!r} for key {key!r}") from None
    raise ConfigError(f"{source}: unknown key {key!r}")


def read_key_values(path: str | Path) -> list[tuple[str, str, int]]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    items = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        items.append((key.strip(), value.strip(), lineno))
    return items


def apply_overrides(config: TrainConfig, pairs: Sequence[str], source: str = "--set") -> TrainConfig:
    updates = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"{source}: expected key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        key = KEY_ALIASES.get(key.strip(), key.strip())
        updates[key] = parse_value(key, value, source)
    try:
        return replace(config, **updates)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path: str | Path | None, overrides: Sequence[str] = ()) -> TrainConfig:
    """Defaults, then the config file, then ``key=value`` overrides."""
    config = TrainConfig()
    if path is not None:
        pairs = [f"{k}={v}" for k, v, _ in read_key_values(path)]
        config = apply_overrides(config, pairs, source=str(path))
    return apply_overrides(config, overrides)


@dataclass
class SweepSpec:
    grid: dict[str, list[int]]
    base: TrainConfig

    def points(self) -> list[TrainConfig]:
        keys = [k for k in GRID_KEYS if k in self.grid]
        return [replace(self.base, **dict(zip(keys, combo)))
                for combo in itertools.product(*(self.grid[k] for k in keys))]


def load_sweep(path: str | Path, overrides: Sequence[str] = ()) -> SweepSpec:
    grid: dict[str, list[int]] = {}
    fixed = []
    for key, value, lineno in read_key_values(path):
        if not key.startswith("grid."):
            fixed.append(f"{key}={value}")
            continue
        name = KEY_ALIASES.get(key[5:], key[5:])
        if name not in GRID_KEYS:
            raise ConfigError(f"{path}:{lineno}: grid key must be one of N, b, M, got {key[5:]!r}")
        values = [v for v in (s.strip() for s in value.split(",")) if v]
        if not values:
            raise ConfigError(f"{path}:{lineno}: empty value list for grid key {name!r}")
        grid[name] = [parse_value(name, v, f"{path}:{lineno}") for v in values]
    if not grid:
        raise ConfigError(f"{path}: sweep defines no grid.* keys")
    base = apply_overrides(TrainConfig(), fixed, source=str(path))
    return SweepSpec(grid, apply_overrides(base, overrides))


def parse_ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(sorted({int(k) for k in text.split(",") if k.strip()}))
    except ValueError:
        raise ConfigError(f"--hits expects comma-separated integers, got {text!r}") from None
    if not ks or min(ks) < 1:
        raise ConfigError(f"--hits values must be positive integers, got {text!r}")
    return ks


def format_metrics(m: Metrics) -> str:
    hits = "  ".join(f"H@{k} {100 * v:.2f}%" for k, v in sorted(m.hits_at.items()))
    return f"MR {m.mean_rank:.2f}  MRR {m.mean_reciprocal_rank:.4f}  {hits}  ({m.num_queries} queries, {m.tie_policy.value})"


@dataclass
class RunRecord:
    config: dict
    dataset_fingerprint: str
    checkpoint: str
    history: str
    valid_metrics: dict
    test_metrics: dict
    epochs_run: int = 0
    best_epoch: int | None = None

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "dataset_fingerprint": self.dataset_fingerprint,
            "checkpoint": self.checkpoint,
            "history": self.history,
            "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch,
            "valid_metrics": self.valid_metrics,
            "test_metrics": self.test_metrics,
        }

    @property
    def record_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def cmd_train(data_dir, config_file=None, out_dir=".", overrides: Sequence[str] = (),
              policy: TiePolicy = TiePolicy.AVERAGE, ks: Sequence[int] = DEFAULT_KS,
              dataset: Dataset | None = None) -> RunRecord:
    config = load_config(config_file, overrides)
    if dataset is None:
        dataset = load_dataset(data_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params, history = fit(dataset, config, log=log.info)
    save_checkpoint(params, out / "model.ckpt")
    dataset.vocabulary.save(out)
    history.write_jsonl(out / "history.jsonl")
    results = {}
    for split in ("valid", "test"):
        triples = dataset.split(split)
        if not triples:
            results[split] = {}
            continue
        m = evaluate(params, expand_queries(triples), dataset.num_entities, dataset.filter, policy, ks)
        write_metrics_json(m, out / f"metrics_{split}.json")
        results[split] = m.to_dict()
        if split == "valid":
            print(f"valid: {format_metrics(m)}")
    record = RunRecord(
        config=config.to_dict(),
        dataset_fingerprint=dataset.fingerprint,
        checkpoint="model.ckpt",
        history="history.jsonl",
        valid_metrics=results["valid"],
        test_metrics=results["test"],
        epochs_run=history.epochs_run,
        best_epoch=history.best_epoch,
    )
    doc = dict(record.to_dict(), record_hash=record.record_hash)
    (out / "run.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return record


def load_members(checkpoints: Sequence[str | Path], vocab: Vocabulary) -> list:
    members = []
    for path in checkpoints:
        path = Path(path)
        if not path.is_file():
            raise DataError(f"checkpoint not found: {path}")
        n_ent, n_rel, _ = read_checkpoint_header(path)
        if (n_ent, n_rel) != (vocab.num_entities, vocab.num_relations):
            raise DataError(
                f"{path}: checkpoint has {n_ent} entities / {n_rel} relations, "
                f"dataset vocabulary has {vocab.num_entities} / {vocab.num_relations}"
            )
        if (path.parent / "entities.txt").is_file():
            if Vocabulary.load(path.parent) != vocab:
                raise DataError(f"{path}: vocabulary dump next to checkpoint differs from the dataset vocabulary")
        members.append(load_checkpoint(path))
    return members


def cmd_eval(checkpoints: Sequence[str | Path], data_dir, split: str = "test",
             policy: TiePolicy = TiePolicy.AVERAGE, ks: Sequence[int] = DEFAULT_KS,
             out_file=None, ranks_file=None, dataset: Dataset | None = None) -> Metrics:
    if not checkpoints:
        raise ConfigError("at least one checkpoint is required")
    if dataset is None:
        dataset = load_dataset(data_dir)
    queries = expand_queries(dataset.split(split))
    members = load_members(checkpoints, dataset.vocabulary)
    scorer = members[0] if len(members) == 1 else Ensemble(members)
    metrics = evaluate(scorer, queries, dataset.num_entities, dataset.filter, policy, ks)
    if out_file is not None:
        write_metrics_json(metrics, out_file)
    if ranks_file is not None:
        write_rank_csv(metrics, queries, ranks_file)
    return metrics


def _sweep_point(args):
    index, config, data_dir, out_dir, policy = args
    overrides = [f"{k}={'none' if v is None else v}" for k, v in config.to_dict().items()]
    start = time.perf_counter()
    try:
        record = cmd_train(data_dir, None, out_dir, overrides, policy)
    except Exception as exc:  # recorded per point; one bad run must not end the sweep
        return index, None, f"{type(exc).__name__}: {exc}", time.perf_counter() - start
    return index, record, None, time.perf_counter() - start


def cmd_sweep(data_dir, sweep_file, out_dir, overrides: Sequence[str] = (), workers: int = 1,
              policy: TiePolicy = TiePolicy.AVERAGE) -> Path:
    """Train every grid point and write ``sweep.csv`` (validation metrics).

    Every point uses the same seed, so the grid isolates the effect of the
    swept hyper-parameters.  Failed points go to ``failures.csv``.
    """
    spec = load_sweep(sweep_file, overrides)
    load_dataset(data_dir)  # fail fast on a bad data directory
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(i, cfg, str(data_dir), str(out / f"run_{i:03d}_N{cfg.dim}_b{cfg.batch_size}_M{cfg.negatives}"),
             TiePolicy(policy))
            for i, cfg in enumerate(spec.points())]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(job) for job in jobs]
    rows, failures = [], []
    for (index, record, error, seconds), (_, cfg, *_) in zip(results, jobs):
        if record is None:
            failures.append([index, cfg.dim, cfg.batch_size, cfg.negatives, error])
            log.warning("grid point %d failed: %s", index, error)
            continue
        m = record.valid_metrics
        rows.append([
            cfg.dim, cfg.batch_size, cfg.negatives,
            round(100 * m["hits"]["1"], 4), round(100 * m["hits"]["10"], 4),
            round(m["mrr"], 6), round(m["mr"], 4), record.epochs_run, f"{seconds:.3f}",
        ])
    path = out / "sweep.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        writer.writerows(rows)
    if failures:
        with open(out / "failures.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "N", "b", "M", "error"])
            writer.writerows(failures)
    return path


def cmd_plot_data(sweep_csv, x: str = "b", ys: Sequence[str] = ("H10", "H1"), header: bool = False) -> str:
    """Sorted ``x<TAB>y1<TAB>y2...`` lines from a sweep CSV."""
    if x not in PLOT_X:
        raise ConfigError(f"unknown x column {x!r}; expected one of {sorted(PLOT_X)}")
    for y in ys:
        if y not in PLOT_Y:
            raise ConfigError(f"unknown y column {y!r}; expected one of {sorted(PLOT_Y)}")
    text = Path(sweep_csv).read_text(encoding="utf-8")
    if not text.strip():
        return ""
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in (x, *ys) if c not in (reader.fieldnames or [])]
    if missing:
        raise ConfigError(f"{sweep_csv}: missing column(s) {', '.join(missing)}")
    rows = sorted(reader, key=lambda row: float(row[x]))
    if not rows:
        return ""
    lines = ["# " + "\t".join([x, *ys])] if header else []
    lines += ["\t".join([row[x], *(row[y] for y in ys)]) for row in rows]
    return "\n".join(lines) + "\n"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distmult-kbc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, training=True, hits=True):
        p.add_argument("--seed", type=int)
        p.add_argument("--tie-policy", choices=[t.value for t in TiePolicy], default=TiePolicy.AVERAGE.value)
        if hits:
            p.add_argument("--hits", default=",".join(map(str, DEFAULT_KS)), help="comma-separated k values")
        if training:
            p.add_argument("--valid-sample", help="validation queries per early-stopping check ('none' for all)")
            p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                           help="override a config key (repeatable)")

    p = sub.add_parser("train", help="train one model")
    p.add_argument("data_dir")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint, or an ensemble of several")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["valid", "test"], default="test")
    p.add_argument("--out", help="write metrics JSON here")
    p.add_argument("--ranks", help="write per-query ranks CSV here")
    common(p, training=False)

    p = sub.add_parser("sweep", help="grid over N, b, M")
    p.add_argument("data_dir")
    p.add_argument("sweep_file")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    common(p, hits=False)

    p = sub.add_parser("plot-data", help="plot-ready TSV from a sweep CSV")
    p.add_argument("sweep_csv")
    p.add_argument("--x", default="b", choices=sorted(PLOT_X))
    p.add_argument("--y", action="append", choices=sorted(PLOT_Y))
    p.add_argument("--header", action="store_true")
    p.add_argument("--out")
    return parser


def _flag_overrides(args) -> list[str]:
    pairs = list(args.set)
    if args.seed is not None:
        pairs.append(f"seed={args.seed}")
    if args.valid_sample is not None:
        pairs.append(f"valid_sample={args.valid_sample}")
    return pairs


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "train":
            record = cmd_train(args.data_dir, args.config, args.out, _flag_overrides(args),
                               TiePolicy(args.tie_policy), parse_ks(args.hits))
            print(f"run record {record.record_hash}")
        elif args.command == "eval":
            metrics = cmd_eval(args.checkpoints, args.data, args.split, TiePolicy(args.tie_policy),
                               parse_ks(args.hits), args.out, args.ranks)
            print(format_metrics(metrics))
            if args.out is None:
                sys.stdout.write(metrics.to_json())
        elif args.command == "sweep":
            path = cmd_sweep(args.data_dir, args.sweep_file, args.out, _flag_overrides(args),
                             args.workers, TiePolicy(args.tie_policy))
            print(path)
        elif args.command == "plot-data":
            text = cmd_plot_data(args.sweep_csv, args.x, args.y or ["H10", "H1"], args.header)
            if args.out:
                Path(args.out).write_text(text, encoding="utf-8")
            else:
                sys.stdout.write(text)
    except (ConfigError, DataError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
