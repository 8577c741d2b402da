"""Communication-free sharded training and the shard combination rules.

Each shard is fitted and used for prediction with no access to any other
shard. Results are combined either at the prediction level (simple or
weighted averaging of per-shard predictions) or, as a baseline, at the
posterior level by pooling shard topic counts (naive combination).
"""

from __future__ import annotations

import enum
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence, TypeVar

import numpy as np

from .core import (
    CountState,
    FittedModel,
    Hyperparams,
    TrainSchedule,
    doc_topic_means,
    fit,
    optimize_eta,
)
from .corpus import BINARY, Corpus, partition
from .predictor import (
    PredictionSet,
    PredictSchedule,
    check_aligned,
    classify,
    predict_corpus,
    relabel,
    shard_source,
)

logger = logging.getLogger(__name__)

MSE_FLOOR = 1e-12

_T = TypeVar("_T")


class CombinerKind(str, enum.Enum):
    NAIVE = "naive"
    SIMPLE = "simple"
    WEIGHTED = "weighted"


class ShardError(RuntimeError):
    def __init__(self, shard_id: int, cause: BaseException):
        super().__init__(f"shard {shard_id} failed: {cause}")
        self.shard_id = shard_id


@dataclass(eq=False)
class ShardFit:
    """Everything one worker produces for its shard.

    ``train_metric`` is filled in by :func:`shard_training_weights` (MSE or
    accuracy of this shard's model over the full training set).
    """

    shard_id: int
    model: FittedModel
    zbar_train: np.ndarray
    state: CountState
    y_train: np.ndarray
    fit_seconds: float = 0.0
    train_metric: float | None = None


def _run_all(fn: Callable[[int], _T], n: int, n_jobs: int | None) -> list[_T]:
    """Run ``fn(0..n-1)`` on up to ``n_jobs`` threads; results in index order."""
    workers = n if n_jobs is None else max(1, min(n_jobs, n))

    def call(i):
        try:
            return fn(i)
        except Exception as exc:
            raise ShardError(i, exc) from exc

    if workers == 1:
        return [call(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(call, range(n)))


def fit_shards(
    shards: Sequence[Corpus],
    hyper: Hyperparams,
    schedule: TrainSchedule = TrainSchedule(),
    base_seed: int = 0,
    n_jobs: int | None = None,
) -> list[ShardFit]:
    """Fit every shard independently with seed ``base_seed + shard_id``."""
    if not shards:
        raise ValueError("need at least one shard")
    vocab = shards[0].vocabulary
    if any(s.vocabulary != vocab for s in shards):
        raise ValueError("shards must share a vocabulary")

    def work(m: int) -> ShardFit:
        start = time.perf_counter()
        model, zbar, state = fit(shards[m], hyper, schedule, base_seed + m, return_state=True)
        elapsed = time.perf_counter() - start
        return ShardFit(m, model, zbar, state, hyper.response(shards[m].labels), elapsed)

    return _run_all(work, len(shards), n_jobs)


def predict_shards(
    models: Sequence[FittedModel],
    corpus: Corpus,
    schedule: PredictSchedule = PredictSchedule(),
    seed: int = 0,
    n_jobs: int | None = None,
) -> list[PredictionSet]:
    """Predict ``corpus`` with each model, using seed ``seed + m`` for model ``m``."""
    return _run_all(
        lambda m: predict_corpus(models[m], corpus, schedule, seed + m, shard_source(m)),
        len(models),
        n_jobs,
    )


def weighted_average(preds: Sequence[PredictionSet], weights: np.ndarray, source: str) -> PredictionSet:
    """Weighted sum of aligned prediction sets; standard errors propagate when present."""
    check_aligned(preds)
    y = np.stack([p.y_hat for p in preds])
    y_hat = weights @ y
    se = None
    if all(p.y_hat_se is not None for p in preds):
        se = np.sqrt((weights**2) @ np.stack([p.y_hat_se for p in preds]) ** 2)
    class_hat = classify(y_hat) if preds[0].class_hat is not None else None
    return PredictionSet(preds[0].doc_ids, y_hat, source, class_hat, se)


def simple_combine(preds: Sequence[PredictionSet]) -> PredictionSet:
    """Arithmetic mean of the per-shard predictions."""
    check_aligned(preds)
    if len(preds) == 1:
        return relabel(preds[0], CombinerKind.SIMPLE.value)
    M = len(preds)
    return weighted_average(preds, np.full(M, 1.0 / M), CombinerKind.SIMPLE.value)


def _normalize(scores: np.ndarray) -> np.ndarray:
    # equal scores give exactly the simple-average weights
    if np.all(scores == scores[0]):
        return np.full(scores.size, 1.0 / scores.size)
    return scores / scores.sum()


def inverse_mse_weights(mse) -> np.ndarray:
    """Weights proportional to 1/MSE; MSEs are floored at 1e-12 first."""
    mse = np.asarray(mse, dtype=np.float64)
    if mse.ndim != 1 or mse.size == 0 or np.any(mse < 0) or not np.isfinite(mse).all():
        raise ValueError(f"MSEs must be a non-empty vector of finite values >= 0, got {mse}")
    inv = 1.0 / np.maximum(mse, MSE_FLOOR)
    return _normalize(inv)


def accuracy_weights(acc) -> np.ndarray:
    """Weights proportional to training accuracy; uniform when every accuracy is 0."""
    acc = np.asarray(acc, dtype=np.float64)
    if acc.ndim != 1 or acc.size == 0 or np.any((acc < 0) | (acc > 1)):
        raise ValueError(f"accuracies must lie in [0, 1], got {acc}")
    if acc.sum() == 0:
        return np.full(acc.size, 1.0 / acc.size)
    return _normalize(acc)


def shard_training_weights(
    shard_fits: Sequence[ShardFit],
    full_train: Corpus,
    schedule: PredictSchedule = PredictSchedule(),
    seed: int = 0,
    n_jobs: int | None = None,
) -> np.ndarray:
    """Score every shard model on the whole training set and turn the scores into weights.

    This is the expensive step of weighted averaging: each shard predicts
    all training documents, not just its own.
    """
    from .evaluation import accuracy, mse

    preds = predict_shards([f.model for f in shard_fits], full_train, schedule, seed, n_jobs)
    labels = full_train.labels
    binary = shard_fits[0].model.hyper.label_kind == BINARY
    for f, p in zip(shard_fits, preds):
        f.train_metric = accuracy(labels, p.class_hat) if binary else mse(labels, p.y_hat)
    metrics = [f.train_metric for f in shard_fits]
    return accuracy_weights(metrics) if binary else inverse_mse_weights(metrics)


def weighted_combine(
    preds: Sequence[PredictionSet],
    shard_fits: Sequence[ShardFit],
    full_train: Corpus,
    schedule: PredictSchedule = PredictSchedule(),
    seed: int = 0,
    n_jobs: int | None = None,
) -> PredictionSet:
    """Average per-shard predictions weighted by each shard's full-training-set score."""
    check_aligned(preds)
    if len(preds) != len(shard_fits):
        raise ValueError("one prediction set per shard fit is required")
    weights = shard_training_weights(shard_fits, full_train, schedule, seed, n_jobs)
    return weighted_average(preds, weights, CombinerKind.WEIGHTED.value)


def ols_eta(zbar: np.ndarray, y: np.ndarray, hyper: Hyperparams) -> np.ndarray:
    """Ordinary least squares of y on zbar (no intercept), ridge fallback when rank deficient."""
    Z = np.asarray(zbar, dtype=np.float64)
    if np.linalg.matrix_rank(Z) == Z.shape[1]:
        eta, *_ = np.linalg.lstsq(Z, y, rcond=None)
        if np.isfinite(eta).all():
            return eta
    logger.warning("OLS design is singular; falling back to the ridge solution (sigma=%g)", hyper.sigma)
    return optimize_eta(Z, y, hyper)


def naive_combine_fit(
    shard_states: Sequence[tuple[CountState, Corpus]], hyper: Hyperparams
) -> FittedModel:
    """Pool shard topic samples as if they came from one chain over all training docs."""
    if not shard_states:
        raise ValueError("need at least one shard state")
    vocab = shard_states[0][1].vocabulary
    T = hyper.n_topics
    if any(c.vocabulary != vocab for _, c in shard_states):
        raise ValueError("shards must share a vocabulary")
    if any(s.T != T for s, _ in shard_states):
        raise ValueError("shards must share the number of topics")

    N_tw = sum(s.N_tw for s, _ in shard_states)
    N_t = N_tw.sum(axis=1)
    phi = (N_tw + hyper.beta) / (N_t[:, None] + vocab.W * hyper.beta)
    zbar = np.vstack([doc_topic_means(s) for s, _ in shard_states])
    y = np.concatenate([hyper.response(c.labels) for _, c in shard_states])
    return FittedModel(phi, ols_eta(zbar, y, hyper), hyper, vocab)


@dataclass
class Timing:
    partition_ms: float = 0.0
    fit_ms: list[float] = field(default_factory=list)
    fit_wall_ms: float = 0.0
    predict_ms: float = 0.0
    combine_ms: float = 0.0
    total_ms: float = 0.0

    @property
    def fit_max_ms(self) -> float:
        return max(self.fit_ms, default=0.0)

    def to_dict(self) -> dict:
        return {
            "partition_ms": self.partition_ms,
            "fit_ms": list(self.fit_ms),
            "fit_max_ms": self.fit_max_ms,
            "fit_wall_ms": self.fit_wall_ms,
            "predict_ms": self.predict_ms,
            "combine_ms": self.combine_ms,
            "total_ms": self.total_ms,
        }


def _ms(start: float) -> float:
    return (time.perf_counter() - start) * 1e3


def combine_from_fits(
    shard_fits: Sequence[ShardFit],
    shards: Sequence[Corpus],
    train: Corpus,
    test: Corpus,
    combiner: CombinerKind | str,
    hyper: Hyperparams,
    predict_schedule: PredictSchedule = PredictSchedule(),
    seed: int = 0,
    n_jobs: int | None = None,
) -> tuple[PredictionSet, Timing, list[PredictionSet]]:
    """Prediction and combination phases for already-fitted shards.

    Returns the combined predictions, the phase timings (``predict_ms`` and
    ``combine_ms`` only) and the per-shard predictions (empty for naive).
    """
    combiner = CombinerKind(combiner)
    timing = Timing()
    if combiner is CombinerKind.NAIVE:
        start = time.perf_counter()
        model = naive_combine_fit([(f.state, s) for f, s in zip(shard_fits, shards)], hyper)
        timing.combine_ms = _ms(start)
        start = time.perf_counter()
        preds = predict_corpus(model, test, predict_schedule, seed, CombinerKind.NAIVE.value)
        timing.predict_ms = _ms(start)
        return preds, timing, []

    start = time.perf_counter()
    local = predict_shards([f.model for f in shard_fits], test, predict_schedule, seed, n_jobs)
    timing.predict_ms = _ms(start)
    start = time.perf_counter()
    if combiner is CombinerKind.SIMPLE:
        preds = simple_combine(local)
    else:
        preds = weighted_combine(local, shard_fits, train, predict_schedule, seed, n_jobs)
    timing.combine_ms = _ms(start)
    return preds, timing, local


def run_pipeline(
    train: Corpus,
    test: Corpus,
    M: int,
    combiner: CombinerKind | str,
    hyper: Hyperparams,
    train_schedule: TrainSchedule = TrainSchedule(),
    predict_schedule: PredictSchedule = PredictSchedule(),
    seed: int = 0,
    n_jobs: int | None = None,
) -> tuple[PredictionSet, Timing]:
    """Partition, fit shards in parallel, predict, combine."""
    t0 = time.perf_counter()
    shards = partition(train, M, seed)
    partition_ms = _ms(t0)
    start = time.perf_counter()
    fits = fit_shards(shards, hyper, train_schedule, seed, n_jobs)
    fit_wall_ms = _ms(start)
    preds, timing, _ = combine_from_fits(
        fits, shards, train, test, combiner, hyper, predict_schedule, seed, n_jobs
    )
    timing.partition_ms = partition_ms
    timing.fit_ms = [f.fit_seconds * 1e3 for f in fits]
    timing.fit_wall_ms = fit_wall_ms
    timing.total_ms = _ms(t0)
    return preds, timing
