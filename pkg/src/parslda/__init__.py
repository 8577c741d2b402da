"""Communication-free parallel supervised LDA.

Shards of a labeled corpus are fitted independently by collapsed Gibbs
sampling; their test predictions are then averaged (simple or weighted by
training score) instead of pooling topic samples, which side-steps the
topic label-switching problem.
"""

from .core import (
    FittedModel,
    Hyperparams,
    TrainSchedule,
    fit,
    load_model,
    save_model,
)
from .corpus import (
    Corpus,
    Document,
    Vocabulary,
    load_corpus,
    partition,
    prune_vocabulary,
    train_test_split,
    write_corpus,
)
from .estimator import ParallelSupervisedLDA, SupervisedLDA
from .parallel import CombinerKind, run_pipeline
from .predictor import PredictionSet, PredictSchedule, predict_corpus

__version__ = "0.1.0"

__all__ = [
    "CombinerKind",
    "Corpus",
    "Document",
    "FittedModel",
    "Hyperparams",
    "ParallelSupervisedLDA",
    "PredictSchedule",
    "PredictionSet",
    "SupervisedLDA",
    "TrainSchedule",
    "Vocabulary",
    "fit",
    "load_corpus",
    "load_model",
    "partition",
    "predict_corpus",
    "prune_vocabulary",
    "run_pipeline",
    "save_model",
    "train_test_split",
    "write_corpus",
]
