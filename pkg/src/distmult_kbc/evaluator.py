"""Filtered ranking evaluation: candidate sets, tie-aware ranks, MR/MRR/Hits@k."""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .kb import Direction, FilterIndex, Query, query_arrays
from .model import ScoredCandidates, block_rows, score_block

DEFAULT_KS = (1, 3, 10)


class TiePolicy(str, enum.Enum):
    OPTIMISTIC = "optimistic"
    PESSIMISTIC = "pessimistic"
    AVERAGE = "average"


def build_candidates(query: Query, num_entities: int, filter: FilterIndex) -> np.ndarray:
    """Filtered candidate set for ``query``, sorted by entity id.

    Every entity whose substitution gives a triple outside ``filter``, plus
    the truth itself.
    """
    keep = np.ones(num_entities, dtype=bool)
    keep[filter.known_answers(query)] = False
    keep[query.truth] = True
    return np.flatnonzero(keep)


def _rank_from_counts(greater, ties, policy: TiePolicy):
    policy = TiePolicy(policy)
    if policy is TiePolicy.OPTIMISTIC:
        return greater + 1.0
    if policy is TiePolicy.PESSIMISTIC:
        return greater + ties + 1.0
    return greater + 1.0 + ties / 2.0


def rank_of_truth(scored: ScoredCandidates, policy: TiePolicy = TiePolicy.AVERAGE) -> float:
    s = scored.scores
    best = s[scored.truth_position]
    greater = int(np.count_nonzero(s > best))
    ties = int(np.count_nonzero(s == best)) - 1
    return float(_rank_from_counts(greater, ties, policy))


@dataclass
class Metrics:
    mean_rank: float
    mean_reciprocal_rank: float
    hits_at: dict[int, float]
    num_queries: int
    tie_policy: TiePolicy = TiePolicy.AVERAGE
    per_query_ranks: list[float] | None = field(default=None, repr=False)
    per_direction: dict[str, "Metrics"] = field(default_factory=dict, repr=False)

    def to_dict(self, nested: bool = True) -> dict:
        out = {
            "mr": self.mean_rank,
            "mrr": self.mean_reciprocal_rank,
            "hits": {str(k): v for k, v in sorted(self.hits_at.items())},
            "num_queries": self.num_queries,
            "tie_policy": TiePolicy(self.tie_policy).value,
        }
        if nested:
            out["per_direction"] = {name: m.to_dict(nested=False) for name, m in sorted(self.per_direction.items())}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def metrics_from_ranks(ranks: Sequence[float], ks: Iterable[int] = DEFAULT_KS,
                       policy: TiePolicy = TiePolicy.AVERAGE) -> Metrics:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("cannot aggregate an empty rank list")
    n = ranks.size
    hits = {int(k): int(np.count_nonzero(ranks <= k)) / n for k in sorted(set(ks))}
    return Metrics(
        mean_rank=float(np.sum(ranks)) / n,
        mean_reciprocal_rank=float(np.sum(1.0 / ranks)) / n,
        hits_at=hits,
        num_queries=n,
        tie_policy=TiePolicy(policy),
        per_query_ranks=ranks.tolist(),
    )


def _scorer_block(scorer, anchors, relations, mask) -> np.ndarray:
    # ensembles normalise over the candidate mask; a single model ranks raw scores
    if hasattr(scorer, "filtered_scores_block"):
        return scorer.filtered_scores_block(anchors, relations, mask)
    return score_block(scorer, anchors, relations)


def query_ranks(scorer, queries: Sequence[Query], num_entities: int, filter: FilterIndex,
                policies: Iterable[TiePolicy] = (TiePolicy.AVERAGE,)) -> dict[TiePolicy, np.ndarray]:
    """Filtered rank of every query's truth, under each requested tie policy.

    ``scorer`` is a :class:`ModelParams` or an :class:`Ensemble`.  Queries
    are scored in blocks against the whole entity table; entities outside a
    query's filtered candidate set are masked out of the comparison.
    """
    policies = [TiePolicy(p) for p in policies]
    anchors, relations, truths, _ = query_arrays(queries)
    out = {p: np.empty(len(queries)) for p in policies}
    step = block_rows(num_entities)
    for start in range(0, len(queries), step):
        stop = min(start + step, len(queries))
        rows = np.arange(stop - start)
        mask = np.ones((stop - start, num_entities), dtype=bool)
        for j, q in enumerate(queries[start:stop]):
            mask[j, filter.known_answers(q)] = False
        mask[rows, truths[start:stop]] = True
        with np.errstate(over="ignore", invalid="ignore"):
            scores = _scorer_block(scorer, anchors[start:stop], relations[start:stop], mask)
        bad = ~np.all(np.isfinite(scores) | ~mask, axis=1)
        if bad.any():
            raise FloatingPointError(f"non-finite candidate scores for query {start + int(np.argmax(bad))}")
        best = scores[rows, truths[start:stop]][:, None]
        greater = np.count_nonzero((scores > best) & mask, axis=1)
        ties = np.count_nonzero((scores == best) & mask, axis=1) - 1
        for p in policies:
            out[p][start:stop] = _rank_from_counts(greater, ties, p)
    return out


def evaluate(scorer, queries: Sequence[Query], num_entities: int, filter: FilterIndex,
             policy: TiePolicy = TiePolicy.AVERAGE, ks: Iterable[int] = DEFAULT_KS) -> Metrics:
    """Filtered MR, MRR and Hits@k with head and tail queries pooled.

    Per-direction breakdowns are attached under ``per_direction``.
    """
    if len(queries) == 0:
        raise ValueError("no queries to evaluate")
    ks = tuple(sorted(set(int(k) for k in ks)))
    policy = TiePolicy(policy)
    ranks = query_ranks(scorer, queries, num_entities, filter, [policy])[policy]
    metrics = metrics_from_ranks(ranks, ks, policy)
    is_head = np.fromiter((q.direction is Direction.HEAD for q in queries), dtype=bool, count=len(queries))
    for name, sel in (("head", is_head), ("tail", ~is_head)):
        if sel.any():
            metrics.per_direction[name] = metrics_from_ranks(ranks[sel], ks, policy)
    return metrics


def write_metrics_json(metrics: Metrics, path: str | Path) -> None:
    Path(path).write_text(metrics.to_json(), encoding="utf-8")


def write_rank_csv(metrics: Metrics, queries: Sequence[Query], path: str | Path) -> None:
    if metrics.per_query_ranks is None:
        raise ValueError("metrics carry no per-query ranks")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["query_index", "direction", "rank"])
        for i, (q, rank) in enumerate(zip(queries, metrics.per_query_ranks)):
            writer.writerow([i, Direction(q.direction).value, repr(float(rank))])
