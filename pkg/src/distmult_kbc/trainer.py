"""Softmax NLL training over sampled negatives with a sparse (lazy) Adam."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .kb import Dataset, Query, expand_queries, query_arrays
from .model import ModelParams, init_params

# examples per gradient chunk; bounds the (chunk, pool, dim) temporaries
_CHUNK_CELLS = 1 << 23


@dataclass
class TrainConfig:
    dim: int = 512
    batch_size: int = 2048
    negatives: int = 2000
    learning_rate: float = 0.001
    l2: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    max_epochs: int = 100
    patience: int | None = 5
    eval_every: int = 1
    valid_sample: int | None = 1000
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.negatives < 1:
            raise ValueError(f"negatives must be >= 1, got {self.negatives}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.l2 < 0:
            raise ValueError(f"l2 must be >= 0, got {self.l2}")
        if self.patience is not None and self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.max_epochs < 0:
            raise ValueError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.valid_sample is not None and self.valid_sample < 1:
            raise ValueError(f"valid_sample must be >= 1, got {self.valid_sample}")

    @classmethod
    def field_types(cls) -> dict[str, str]:
        return {f.name: f.type for f in fields(cls)}

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    entity_m: np.ndarray
    entity_v: np.ndarray
    relation_m: np.ndarray
    relation_v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        e = params.entity_embeddings
        r = params.relation_embeddings
        return cls(np.zeros_like(e), np.zeros_like(e), np.zeros_like(r), np.zeros_like(r))


@dataclass
class SparseGrads:
    """Accumulated gradient rows, keyed by table and row id.

    Row id arrays are sorted and unique; ``entity_grads[i]`` belongs to
    entity ``entity_rows[i]``.
    """

    entity_rows: np.ndarray
    entity_grads: np.ndarray
    relation_rows: np.ndarray
    relation_grads: np.ndarray

    def __getitem__(self, key: tuple[str, int]) -> np.ndarray:
        table, row = key
        rows, grads = self._table(table)
        pos = np.searchsorted(rows, row)
        if pos >= len(rows) or rows[pos] != row:
            raise KeyError(key)
        return grads[pos]

    def __contains__(self, key) -> bool:
        try:
            self[key]
        except KeyError:
            return False
        return True

    def _table(self, table: str):
        if table == "entity":
            return self.entity_rows, self.entity_grads
        if table == "relation":
            return self.relation_rows, self.relation_grads
        raise KeyError(table)

    def items(self):
        for table in ("entity", "relation"):
            rows, grads = self._table(table)
            for row, g in zip(rows.tolist(), grads):
                yield (table, row), g

    def __len__(self) -> int:
        return len(self.entity_rows) + len(self.relation_rows)


class NonFiniteGradientError(FloatingPointError):
    pass


class _GradAccumulator:
    def __init__(self, params: ModelParams):
        self.ent = np.zeros_like(params.entity_embeddings)
        self.rel = np.zeros_like(params.relation_embeddings)
        self.ent_touched = np.zeros(params.num_entities, dtype=bool)
        self.rel_touched = np.zeros(params.num_relations, dtype=bool)

    def add_entities(self, rows, vals):
        np.add.at(self.ent, rows, vals)
        self.ent_touched[rows] = True

    def add_relations(self, rows, vals):
        np.add.at(self.rel, rows, vals)
        self.rel_touched[rows] = True

    def result(self) -> SparseGrads:
        er = np.flatnonzero(self.ent_touched)
        rr = np.flatnonzero(self.rel_touched)
        return SparseGrads(er, self.ent[er], rr, self.rel[rr])


def batch_loss_and_grads(params: ModelParams, anchors, relations, pools, l2: float = 0.0):
    """Per-example NLL losses and the summed sparse gradient of a batch.

    ``pools`` is a ``(batch, pool)`` id matrix whose first column holds each
    example's truth and the remaining columns its negatives.  Head and tail
    queries share one formula because the model is symmetric.
    """
    anchors = np.asarray(anchors, dtype=np.int64)
    relations = np.asarray(relations, dtype=np.int64)
    pools = np.asarray(pools, dtype=np.int64)
    n, k = pools.shape
    dim = params.dim
    E = params.entity_embeddings
    R = params.relation_embeddings
    acc = _GradAccumulator(params)
    losses = np.empty(n)
    step = max(1, _CHUNK_CELLS // (k * dim))
    for start in range(0, n, step):
        sl = slice(start, min(start + step, n))
        a, rel, pool = anchors[sl], relations[sl], pools[sl]
        A = E[a]
        Rr = R[rel]
        C = E[pool]                                   # (b, k, dim)
        q = A * Rr
        scores = np.matmul(C, q[:, :, None])[:, :, 0]
        shifted = scores - scores.max(axis=1, keepdims=True)
        expd = np.exp(shifted)
        denom = expd.sum(axis=1, keepdims=True)
        losses[sl] = np.log(denom[:, 0]) - shifted[:, 0]
        delta = expd / denom
        delta[:, 0] -= 1.0                            # p_j - [j is truth]
        weighted = np.matmul(delta[:, None, :], C)[:, 0, :]
        acc.add_entities(a, Rr * weighted)
        acc.add_relations(rel, A * weighted)
        acc.add_entities(pool.ravel(), (delta[:, :, None] * q[:, None, :]).reshape(-1, dim))
        if l2 > 0:
            b = len(a)
            ent_rows = np.concatenate([a[:, None], pool], axis=1)
            # each example penalises every distinct row it touches once
            keys = np.unique(np.arange(b)[:, None] * params.num_entities + ent_rows)
            ex, rows = np.divmod(keys, params.num_entities)
            acc.add_entities(rows, l2 * E[rows])
            acc.add_relations(rel, l2 * Rr)
            ent_pen = np.zeros(b)
            np.add.at(ent_pen, ex, np.einsum("ij,ij->i", E[rows], E[rows]))
            losses[sl] += 0.5 * l2 * (ent_pen + np.einsum("ij,ij->i", Rr, Rr))
    return losses, acc.result()


def example_loss_and_grads(params: ModelParams, query: Query, negatives: Sequence[int], l2: float = 0.0):
    negatives = np.asarray(negatives, dtype=np.int64)
    if np.any(negatives == query.truth):
        raise ValueError("negatives must not contain the query's truth")
    pool = np.concatenate([[query.truth], negatives])[None, :]
    losses, grads = batch_loss_and_grads(params, [query.anchor], [query.relation], pool, l2)
    return float(losses[0]), grads


def sample_negatives(query: Query, M: int, num_entities: int, rng: np.random.Generator) -> np.ndarray:
    """Distinct entities drawn uniformly from all entities except the truth.

    Other entities that also complete the query to a true triple may be
    drawn; only the query's own answer is excluded.
    """
    if num_entities < 2:
        raise ValueError("negative sampling needs at least two entities")
    k = min(M, num_entities - 1)
    draws = rng.choice(num_entities - 1, size=k, replace=False)
    draws[draws >= query.truth] += 1
    return draws


def adam_step(params: ModelParams, state: AdamState, grads: SparseGrads, config: TrainConfig):
    """One lazy Adam update touching only the rows present in ``grads``.

    The step counter (and hence bias correction) is global; moments of rows
    absent from ``grads`` are left as they are.
    """
    for table, rows, g in (("entity", grads.entity_rows, grads.entity_grads),
                           ("relation", grads.relation_rows, grads.relation_grads)):
        bad = ~np.all(np.isfinite(g), axis=1)
        if bad.any():
            raise NonFiniteGradientError(f"non-finite gradient in {table} row {int(rows[np.argmax(bad)])}")
    state.t += 1
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_epsilon
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for table, m, v, rows, g in (
        (params.entity_embeddings, state.entity_m, state.entity_v, grads.entity_rows, grads.entity_grads),
        (params.relation_embeddings, state.relation_m, state.relation_v, grads.relation_rows, grads.relation_grads),
    ):
        if len(rows) == 0:
            continue
        m_rows = b1 * m[rows] + (1.0 - b1) * g
        v_rows = b2 * v[rows] + (1.0 - b2) * (g * g)
        m[rows] = m_rows
        v[rows] = v_rows
        table[rows] -= config.learning_rate * (m_rows / bc1) / (np.sqrt(v_rows / bc2) + eps)
    return params, state


def train_epoch(params: ModelParams, state: AdamState, queries: Sequence[Query],
                config: TrainConfig, rng: np.random.Generator) -> float:
    """Shuffle, batch, and apply one Adam step per batch; returns mean loss."""
    if len(queries) == 0:
        raise ValueError("no training queries")
    anchors, relations, truths, _ = query_arrays(queries)
    n_ent = params.num_entities
    order = rng.permutation(len(queries))
    total = 0.0
    for start in range(0, len(order), config.batch_size):
        idx = order[start:start + config.batch_size]
        pools = np.stack([
            np.concatenate([[truths[i]], sample_negatives(queries[i], config.negatives, n_ent, rng)])
            for i in idx
        ])
        losses, grads = batch_loss_and_grads(params, anchors[idx], relations[idx], pools, config.l2)
        adam_step(params, state, grads, config)
        total += float(np.sum(losses))
    return total / len(queries)


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


@dataclass
class TrainHistory:
    epoch_losses: list[float] = field(default_factory=list)
    evaluations: list[tuple[int, float]] = field(default_factory=list)
    initial_valid_hits10: float | None = None
    best_epoch: int | None = None
    best_valid_hits10: float | None = None
    stopped_reason: str = ""

    @property
    def epochs_run(self) -> int:
        return len(self.epoch_losses)

    def records(self) -> list[dict]:
        out = []
        if self.initial_valid_hits10 is not None:
            out.append({"kind": "eval", "epoch": 0, "valid_hits10": self.initial_valid_hits10})
        evals = dict(self.evaluations)
        for epoch, loss in enumerate(self.epoch_losses, start=1):
            out.append({"kind": "epoch", "epoch": epoch, "mean_loss": loss})
            if epoch in evals:
                out.append({"kind": "eval", "epoch": epoch, "valid_hits10": evals[epoch]})
        out.append({
            "kind": "summary",
            "best_epoch": self.best_epoch,
            "best_valid_hits10": self.best_valid_hits10,
            "epochs_run": self.epochs_run,
            "stopped_reason": self.stopped_reason,
        })
        return out

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")


def validation_queries(dataset: Dataset, config: TrainConfig) -> list[Query]:
    queries = expand_queries(dataset.valid)
    if config.valid_sample is not None and config.valid_sample < len(queries):
        rng = np.random.default_rng([config.seed, 0x5EED])
        idx = np.sort(rng.choice(len(queries), size=config.valid_sample, replace=False))
        queries = [queries[i] for i in idx]
    return queries


def fit(dataset: Dataset, config: TrainConfig,
        validate: Callable[[ModelParams], float] | None = None,
        log: Callable[[str], None] | None = None) -> tuple[ModelParams, TrainHistory]:
    """Train with early stopping on validation Hits@10.

    ``validate`` maps parameters to a validation Hits@10; by default it is
    the filtered Hits@10 (average tie policy) on the validation queries,
    subsampled to ``config.valid_sample``.  Returns the best snapshot.
    """
    params = init_params(dataset.num_entities, dataset.num_relations, config.dim, config.seed)
    history = TrainHistory()
    if config.max_epochs == 0:
        history.stopped_reason = "max_epochs"
        return params, history
    if validate is None:
        from .evaluator import TiePolicy, evaluate

        vq = validation_queries(dataset, config)
        if not vq:
            if config.patience is not None:
                raise ValueError("early stopping needs a non-empty validation split")
        else:
            def validate(p: ModelParams) -> float:
                return evaluate(p, vq, dataset.num_entities, dataset.filter, TiePolicy.AVERAGE, ks=(10,)).hits_at[10]

    train_queries = expand_queries(dataset.train)
    state = AdamState.zeros_like(params)
    if validate is not None:
        history.initial_valid_hits10 = float(validate(params))
    best = None
    stale = 0
    history.stopped_reason = "max_epochs"
    for epoch in range(1, config.max_epochs + 1):
        loss = train_epoch(params, state, train_queries, config, epoch_rng(config.seed, epoch))
        history.epoch_losses.append(loss)
        msg = f"epoch {epoch}: loss {loss:.6f}"
        if validate is not None and epoch % config.eval_every == 0:
            h10 = float(validate(params))
            history.evaluations.append((epoch, h10))
            msg += f"  valid H@10 {h10:.4f}"
            if history.best_valid_hits10 is None or h10 > history.best_valid_hits10:
                history.best_valid_hits10 = h10
                history.best_epoch = epoch
                best = params.copy()
                stale = 0
            else:
                stale += 1
        if log is not None:
            log(msg)
        if config.patience is not None and stale >= config.patience:
            history.stopped_reason = "early_stop"
            break
    if best is None:
        history.best_epoch = history.epochs_run
        return params, history
    return best, history
