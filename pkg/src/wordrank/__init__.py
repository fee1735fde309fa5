"""Word spotting with smooth, differentiable ranking objectives."""

from .data import Dataset, generate_dataset, load_dataset, save_dataset
from .estimator import WordSpotter
from .metrics import (
    QueryContext,
    RelevanceSpec,
    average_precision,
    edit_distance_matrix,
    levenshtein,
    ndcg,
)
from .model import WordSpotterModel
from .retrieval import evaluate, query_by_example, query_by_string
from .smooth import SmoothConfig, loss_ap, loss_ndcg, smooth_ap, smooth_ndcg
from .training import TrainConfig, combined_loss, train

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "QueryContext",
    "RelevanceSpec",
    "SmoothConfig",
    "TrainConfig",
    "WordSpotter",
    "WordSpotterModel",
    "average_precision",
    "combined_loss",
    "edit_distance_matrix",
    "evaluate",
    "generate_dataset",
    "levenshtein",
    "load_dataset",
    "loss_ap",
    "loss_ndcg",
    "ndcg",
    "query_by_example",
    "query_by_string",
    "save_dataset",
    "smooth_ap",
    "smooth_ndcg",
    "train",
]
