"""DistMult parameters, trilinear scoring and softmax normalisation.

All arithmetic is float64.  Every scoring path forms the per-dimension term
as ``(head_i * tail_i) * rel_i`` and accumulates terms in ascending
dimension order, so ``score(h, r, t) == score(t, r, h)`` holds bit for bit
and the batched candidate scorer reproduces single-triple scores exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .kb import Query

CHECKPOINT_MAGIC = "distmult"
CHECKPOINT_VERSION = "v1"

# rough cap on the number of float64 cells in one scoring block
_BLOCK_CELLS = 1 << 22


@dataclass
class ModelParams:
    entity_embeddings: np.ndarray
    relation_embeddings: np.ndarray

    def __post_init__(self):
        self.entity_embeddings = np.ascontiguousarray(self.entity_embeddings, dtype=np.float64)
        self.relation_embeddings = np.ascontiguousarray(self.relation_embeddings, dtype=np.float64)
        if self.entity_embeddings.ndim != 2 or self.relation_embeddings.ndim != 2:
            raise ValueError("embedding tables must be 2-D")
        if self.entity_embeddings.shape[1] != self.relation_embeddings.shape[1]:
            raise ValueError(
                f"dimension mismatch: entities have {self.entity_embeddings.shape[1]}, "
                f"relations have {self.relation_embeddings.shape[1]}"
            )

    @property
    def dim(self) -> int:
        return self.entity_embeddings.shape[1]

    @property
    def num_entities(self) -> int:
        return self.entity_embeddings.shape[0]

    @property
    def num_relations(self) -> int:
        return self.relation_embeddings.shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(self.entity_embeddings.copy(), self.relation_embeddings.copy())

    def score_candidates(self, query: Query, candidates: Sequence[int]) -> "ScoredCandidates":
        return score_all_candidates(self, query, candidates)


@dataclass
class ScoredCandidates:
    candidate_ids: np.ndarray
    scores: np.ndarray
    truth_position: int

    def __post_init__(self):
        self.candidate_ids = np.asarray(self.candidate_ids, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if len(self.candidate_ids) == 0 or len(self.candidate_ids) != len(self.scores):
            raise ValueError("candidate ids and scores must be non-empty and of equal length")
        if not 0 <= self.truth_position < len(self.scores):
            raise ValueError(f"truth_position {self.truth_position} out of range")

    @property
    def truth_score(self) -> float:
        return float(self.scores[self.truth_position])


def init_params(num_entities: int, num_relations: int, dim: int, seed: int) -> ModelParams:
    """Draw both tables i.i.d. from N(0, 1/dim) with a seeded generator."""
    if num_entities < 1 or num_relations < 1:
        raise ValueError(f"need at least one entity and one relation, got {num_entities} and {num_relations}")
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    rng = np.random.default_rng(seed)
    std = 1.0 / math.sqrt(dim)
    entities = rng.normal(0.0, std, size=(num_entities, dim))
    relations = rng.normal(0.0, std, size=(num_relations, dim))
    return ModelParams(entities, relations)


def _check_ids(params: ModelParams, entities, relations) -> None:
    entities = np.asarray(entities)
    relations = np.asarray(relations)
    if entities.size and (entities.min() < 0 or entities.max() >= params.num_entities):
        raise IndexError(f"entity id out of range [0, {params.num_entities})")
    if relations.size and (relations.min() < 0 or relations.max() >= params.num_relations):
        raise IndexError(f"relation id out of range [0, {params.num_relations})")


def score(params: ModelParams, h: int, r: int, t: int) -> float:
    _check_ids(params, [h, t], [r])
    terms = (params.entity_embeddings[h] * params.entity_embeddings[t]) * params.relation_embeddings[r]
    acc = 0.0
    for x in terms.tolist():
        acc += x
    return acc


def score_block(params: ModelParams, anchors, relations, entity_ids=None) -> np.ndarray:
    """Scores of every (anchor, relation) pair against a set of entities.

    Returns a ``(len(anchors), len(entity_ids))`` matrix; ``entity_ids``
    defaults to all entities.  Direction does not matter because the model
    is symmetric in head and tail.
    """
    anchors = np.asarray(anchors, dtype=np.int64)
    relations = np.asarray(relations, dtype=np.int64)
    _check_ids(params, anchors, relations)
    if entity_ids is None:
        cand_t = params.entity_embeddings.T
    else:
        entity_ids = np.asarray(entity_ids, dtype=np.int64)
        _check_ids(params, entity_ids, [])
        cand_t = params.entity_embeddings[entity_ids].T
    cand_t = np.ascontiguousarray(cand_t)
    a = params.entity_embeddings[anchors]
    rel = params.relation_embeddings[relations]
    out = np.zeros((len(anchors), cand_t.shape[1]))
    tmp = np.empty_like(out)
    for i in range(params.dim):
        np.multiply(cand_t[i][None, :], a[:, i, None], out=tmp)
        tmp *= rel[:, i, None]
        out += tmp
    return out


def block_rows(num_columns: int) -> int:
    """How many query rows to score at once against ``num_columns`` entities."""
    return max(1, _BLOCK_CELLS // max(1, num_columns))


def score_all_candidates(params: ModelParams, query: Query, candidates: Sequence[int]) -> ScoredCandidates:
    candidates = np.asarray(candidates, dtype=np.int64)
    hits = np.flatnonzero(candidates == query.truth)
    if len(hits) == 0:
        raise ValueError(f"truth entity {query.truth} is not among the candidates")
    if len(hits) > 1:
        raise ValueError(f"truth entity {query.truth} appears {len(hits)} times among the candidates")
    scores = score_block(params, [query.anchor], [query.relation], candidates)[0]
    return ScoredCandidates(candidates, scores, int(hits[0]))


def log_softmax_all(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("scores must be non-empty")
    if not np.all(np.isfinite(scores)):
        raise FloatingPointError("non-finite score value")
    shifted = scores - scores.max()
    return shifted - np.log(np.sum(np.exp(shifted)))


def log_softmax(scores, target: int) -> float:
    """Log-probability of ``target`` under a softmax over ``scores``."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= target < scores.size:
        raise IndexError(f"target {target} out of range for {scores.size} scores")
    return float(log_softmax_all(scores)[target])


def softmax(scores, axis: int = -1) -> np.ndarray:
    """Row-wise softmax; ``-inf`` entries get probability zero."""
    scores = np.asarray(scores, dtype=np.float64)
    shifted = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    header = f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION} {params.num_entities} {params.num_relations} {params.dim}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(params.entity_embeddings.astype("<f8").tobytes(order="C"))
        fh.write(params.relation_embeddings.astype("<f8").tobytes(order="C"))


def read_checkpoint_header(path: str | Path) -> tuple[int, int, int]:
    with open(path, "rb") as fh:
        return _parse_header(fh.readline(), path)


def _parse_header(line: bytes, path) -> tuple[int, int, int]:
    parts = line.decode("ascii", errors="replace").split()
    if len(parts) != 5 or parts[0] != CHECKPOINT_MAGIC or parts[1] != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a {CHECKPOINT_MAGIC} {CHECKPOINT_VERSION} checkpoint")
    n_ent, n_rel, dim = (int(p) for p in parts[2:])
    return n_ent, n_rel, dim


def load_checkpoint(path: str | Path) -> ModelParams:
    with open(path, "rb") as fh:
        n_ent, n_rel, dim = _parse_header(fh.readline(), path)
        body = fh.read()
    expected = 8 * dim * (n_ent + n_rel)
    if len(body) != expected:
        raise ValueError(f"{path}: expected {expected} bytes of parameters, found {len(body)}")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    split = n_ent * dim
    return ModelParams(flat[:split].reshape(n_ent, dim), flat[split:].reshape(n_rel, dim))
