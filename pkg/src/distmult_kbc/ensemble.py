"""Equal-weight ensembles that average per-model softmax probabilities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kb import Query, Vocabulary
from .model import ModelParams, ScoredCandidates, score_block, softmax


class EnsembleMismatchError(ValueError):
    pass


@dataclass
class Ensemble:
    """Members may differ in embedding size but must share one vocabulary."""

    members: list[ModelParams]

    def __post_init__(self):
        self.members = list(self.members)
        if not self.members:
            raise EnsembleMismatchError("an ensemble needs at least one member")
        shapes = {(m.num_entities, m.num_relations) for m in self.members}
        if len(shapes) != 1:
            raise EnsembleMismatchError(f"members disagree on entity/relation counts: {sorted(shapes)}")

    @property
    def num_entities(self) -> int:
        return self.members[0].num_entities

    @property
    def num_relations(self) -> int:
        return self.members[0].num_relations

    def check_vocabulary(self, vocab: Vocabulary) -> None:
        if (vocab.num_entities, vocab.num_relations) != (self.num_entities, self.num_relations):
            raise EnsembleMismatchError(
                f"ensemble covers {self.num_entities} entities / {self.num_relations} relations, "
                f"vocabulary has {vocab.num_entities} / {vocab.num_relations}"
            )

    def filtered_scores_block(self, anchors, relations, mask: np.ndarray) -> np.ndarray:
        """Averaged probabilities for a block of queries.

        Each member's scores are softmax-normalised over the entities allowed
        by ``mask`` (one row per query); masked-out entities get zero.
        """
        probs = []
        for member in self.members:
            s = score_block(member, anchors, relations)
            s[~mask] = -np.inf
            probs.append(softmax(s, axis=1))
        return _mean_over_members(probs)

    def score_candidates(self, query: Query, candidates: Sequence[int]) -> ScoredCandidates:
        return ensemble_scores(self, query, candidates)


def _mean_over_members(arrays: list[np.ndarray]) -> np.ndarray:
    # sorting along the member axis makes the sum independent of member order
    if len(arrays) == 1:
        return arrays[0]
    stacked = np.sort(np.stack(arrays), axis=0)
    total = stacked[0].copy()
    for layer in stacked[1:]:
        total += layer
    return total / len(arrays)


def ensemble_scores(ensemble: Ensemble, query: Query, candidates: Sequence[int]) -> ScoredCandidates:
    candidates = np.asarray(candidates, dtype=np.int64)
    hits = np.flatnonzero(candidates == query.truth)
    if len(hits) != 1:
        raise ValueError(f"truth entity {query.truth} must appear exactly once among the candidates")
    probs = []
    for member in ensemble.members:
        s = score_block(member, [query.anchor], [query.relation], candidates)[0]
        probs.append(softmax(s))
    return ScoredCandidates(candidates, _mean_over_members(probs), int(hits[0]))
