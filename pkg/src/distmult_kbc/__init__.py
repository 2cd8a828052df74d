"""DistMult knowledge base completion with filtered ranking evaluation."""

from .ensemble import Ensemble, ensemble_scores
from .evaluator import Metrics, TiePolicy, build_candidates, evaluate, rank_of_truth
from .kb import Dataset, Direction, FilterIndex, Query, Triple, Vocabulary, expand_queries, load_dataset
from .model import ModelParams, init_params, load_checkpoint, save_checkpoint, score, score_all_candidates
from .trainer import TrainConfig, TrainHistory, fit

__all__ = [
    "Dataset", "Direction", "Ensemble", "FilterIndex", "Metrics", "ModelParams", "Query", "TiePolicy",
    "TrainConfig", "TrainHistory", "Triple", "Vocabulary", "build_candidates", "ensemble_scores", "evaluate",
    "expand_queries", "fit", "init_params", "load_checkpoint", "load_dataset", "rank_of_truth",
    "save_checkpoint", "score", "score_all_candidates",
]
