"""Test-time topic sampling under a frozen model and response prediction."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import _kernels
from .core import LOGIT_LINK, CountState, FittedModel, init_assignments
from .corpus import BINARY, Corpus, remap_to_vocabulary

logger = logging.getLogger(__name__)

NONPARALLEL = "nonparallel"


@dataclass(frozen=True)
class PredictSchedule:
    sweeps: int = 50
    burn_in: int = 25
    average_tail: bool = True

    def __post_init__(self):
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")
        if not 0 <= self.burn_in < self.sweeps:
            raise ValueError(f"burn_in must lie in [0, sweeps), got {self.burn_in}")


@dataclass(eq=False)
class PredictionSet:
    """Per-document predictions with provenance.

    ``y_hat_se`` holds batch-means Monte Carlo standard errors when the
    post-burn-in tail was long enough to estimate them.
    """

    doc_ids: list[str]
    y_hat: np.ndarray
    source: str = NONPARALLEL
    class_hat: np.ndarray | None = None
    y_hat_se: np.ndarray | None = None

    def __post_init__(self):
        self.doc_ids = list(self.doc_ids)
        self.y_hat = np.asarray(self.y_hat, dtype=np.float64)
        if self.y_hat.shape != (len(self.doc_ids),):
            raise ValueError("y_hat and doc_ids lengths differ")
        if not np.isfinite(self.y_hat).all():
            raise ValueError("y_hat must be finite")
        if self.class_hat is not None:
            self.class_hat = np.asarray(self.class_hat, dtype=np.int64)
            if self.class_hat.shape != self.y_hat.shape:
                raise ValueError("class_hat and y_hat lengths differ")

    def __len__(self) -> int:
        return len(self.doc_ids)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PredictionSet):
            return NotImplemented
        same_class = (self.class_hat is None and other.class_hat is None) or (
            self.class_hat is not None
            and other.class_hat is not None
            and np.array_equal(self.class_hat, other.class_hat)
        )
        return (
            self.doc_ids == other.doc_ids
            and self.source == other.source
            and np.array_equal(self.y_hat, other.y_hat)
            and same_class
        )

    __hash__ = None  # type: ignore[assignment]


def shard_source(m: int) -> str:
    return f"shard {m}"


def classify(y_hat: np.ndarray) -> np.ndarray:
    return (np.asarray(y_hat) >= 0.5).astype(np.int64)


def write_predictions(preds: PredictionSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, doc_id in enumerate(preds.doc_ids):
            fields = [doc_id, repr(float(preds.y_hat[i]))]
            if preds.class_hat is not None:
                fields.append(str(int(preds.class_hat[i])))
            fh.write("\t".join(fields) + "\n")


def read_predictions(path: str | Path, source: str = NONPARALLEL) -> PredictionSet:
    doc_ids, y_hat, classes = [], [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise ValueError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields")
        doc_ids.append(parts[0])
        y_hat.append(float(parts[1]))
        if len(parts) == 3:
            classes.append(int(parts[2]))
    if classes and len(classes) != len(doc_ids):
        raise ValueError(f"{path}: class_hat present on some lines only")
    return PredictionSet(doc_ids, np.array(y_hat), source, np.array(classes) if classes else None)


def predict_topic_weights(state: CountState, d: int, n: int, model: FittedModel) -> np.ndarray:
    """Prediction-time conditional for one token (counts include it; excluded here)."""
    i = state.offsets[d] + n
    if not state.offsets[d] <= i < state.offsets[d + 1]:
        raise IndexError(f"token {n} out of range for document {d}")
    ndt = state.N_dt[d].astype(np.float64)
    ndt[state.z[i]] -= 1
    alpha = model.hyper.alpha
    T = model.hyper.n_topics
    return (ndt + alpha) / (state.N_d[d] - 1 + T * alpha) * model.phi[:, state.words[i]]


def exact_single_token_prediction(model: FittedModel, word: int) -> float:
    """Linear predictor of a one-token document with z-bar replaced by its exact expectation.

    Sums are correctly rounded, so the result does not depend on topic order.
    """
    weights = model.hyper.alpha * model.phi[:, word]
    total = math.fsum(weights)
    return math.fsum(weights * model.eta) / total


def gibbs_sweep_test(state: CountState, corpus: Corpus, model: FittedModel, rng) -> CountState:
    """One prediction sweep over ``state`` (in place). ``corpus`` must be in the model's vocabulary."""
    if corpus.vocabulary != model.vocabulary:
        raise ValueError("corpus is not expressed in the model vocabulary")
    if state.T == 1:
        return state
    u = rng.random(state.z.size)
    _kernels.predict_sweep(
        state.words, state.offsets, state.z, state.N_dt, np.ascontiguousarray(model.phi),
        model.hyper.alpha, u,
    )
    return state


def batch_means_se(trace: np.ndarray) -> np.ndarray | None:
    """Batch-means standard error of the column means of ``trace`` (sweeps x docs)."""
    n = trace.shape[0]
    n_batches = int(math.isqrt(n))
    if n_batches < 2:
        return None
    size = n // n_batches
    means = trace[: n_batches * size].reshape(n_batches, size, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / math.sqrt(n_batches)


def sample_test_topics(model: FittedModel, test: Corpus, schedule: PredictSchedule, seed):
    """Run the test-time chain; returns (zbar, per-sweep linear predictor trace)."""
    rng = np.random.default_rng(seed)
    state = init_assignments(test, model.hyper, rng)
    inv_len = 1.0 / state.N_d[:, None]
    zbar_sum = np.zeros((test.D, model.hyper.n_topics))
    trace = []
    for sweep in range(1, schedule.sweeps + 1):
        gibbs_sweep_test(state, test, model, rng)
        if schedule.average_tail and sweep > schedule.burn_in:
            zbar = state.N_dt * inv_len
            zbar_sum += zbar
            trace.append(zbar @ model.eta)
    if schedule.average_tail:
        zbar = zbar_sum / (schedule.sweeps - schedule.burn_in)
        return zbar, np.array(trace)
    return state.N_dt * inv_len, None


def predict_corpus(
    model: FittedModel,
    test: Corpus,
    schedule: PredictSchedule = PredictSchedule(),
    seed: int = 0,
    source: str = NONPARALLEL,
) -> PredictionSet:
    """Predict the response of every document in ``test``.

    Tokens outside the model vocabulary are dropped. A document with no
    in-vocabulary tokens is predicted as if its topic mix were uniform.
    """
    if test.D == 0:
        raise ValueError("empty test corpus")
    test, n_oov, empty = remap_to_vocabulary(test, model.vocabulary)
    if n_oov:
        logger.info("dropped %d out-of-vocabulary test tokens", n_oov)
    if empty:
        logger.warning("%d test documents have no known words: %s", len(empty), empty[:10])

    zbar, trace = sample_test_topics(model, test, schedule, seed)
    linear = zbar @ model.eta
    se = batch_means_se(trace) if trace is not None else None
    if empty:
        empty_set = set(empty)
        mask = np.array([d in empty_set for d in test.doc_ids])
        linear[mask] = model.eta.mean()
        if se is not None:
            se[mask] = 0.0

    class_hat = None
    if model.hyper.link == LOGIT_LINK:
        y_hat = expit(linear)
        if se is not None:
            se = se * y_hat * (1 - y_hat)
    else:
        y_hat = linear
    if model.hyper.label_kind == BINARY:
        class_hat = classify(y_hat)
    return PredictionSet(test.doc_ids, y_hat, source, class_hat, se)


def relabel(preds: PredictionSet, source: str) -> PredictionSet:
    return replace(preds, source=source)


def check_aligned(preds: Sequence[PredictionSet]) -> None:
    if not preds:
        raise ValueError("no prediction sets given")
    ids = preds[0].doc_ids
    for m, p in enumerate(preds[1:], start=1):
        if p.doc_ids != ids:
            raise ValueError(f"prediction set {m} covers different doc_ids than set 0")
