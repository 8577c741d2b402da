"""scikit-learn compatible wrappers around the functional core."""

from __future__ import annotations

import numbers
from typing import Any, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted, column_or_1d

from .core import IDENTITY_LINK, FittedModel, Hyperparams, TrainSchedule, fit
from .corpus import (
    BINARY,
    Corpus,
    Document,
    Vocabulary,
    build_corpus,
    doc_id_for,
    infer_label_kind,
    partition,
    remap_to_vocabulary,
    tokenize,
)
from .parallel import (
    CombinerKind,
    fit_shards,
    naive_combine_fit,
    predict_shards,
    shard_training_weights,
)
from .predictor import PredictionSet, PredictSchedule, classify, predict_corpus, sample_test_topics


def check_documents(X: Any, y: Any = None, require_labels: bool = False) -> Corpus:
    """Coerce ``X`` (and optional labels ``y``) into a :class:`Corpus`.

    ``X`` may be a Corpus, a list of raw strings (tokenized), a list of
    token lists, or a list of non-negative integer id sequences. Integer
    ids map to the words ``"0"``, ``"1"``, ... so train and test id spaces
    line up by word.
    """
    if isinstance(X, Corpus):
        corpus = X
        if y is not None:
            labels = column_or_1d(np.asarray(y, dtype=np.float64))
            if labels.size != corpus.D:
                raise ValueError(f"X has {corpus.D} documents but y has {labels.size} labels")
            docs = tuple(Document(d.doc_id, d.tokens, float(v)) for d, v in zip(corpus.docs, labels))
            corpus = Corpus(corpus.vocabulary, docs, infer_label_kind(labels))
    else:
        X = list(X)
        if not X:
            raise ValueError("no documents given")
        if y is None:
            labels = [None] * len(X)
        else:
            labels = [float(v) for v in column_or_1d(np.asarray(y, dtype=np.float64))]
            if len(labels) != len(X):
                raise ValueError(f"X has {len(X)} documents but y has {len(labels)} labels")
        if all(isinstance(doc, str) for doc in X):
            corpus = build_corpus(zip(labels, (tokenize(doc) for doc in X)))
        elif all(
            len(doc) and all(isinstance(t, numbers.Integral) for t in doc) for doc in X
        ):
            W = max(int(max(doc)) for doc in X) + 1
            docs = tuple(
                Document(doc_id_for(i), np.asarray(doc, dtype=np.int64), label)
                for i, (doc, label) in enumerate(zip(X, labels))
            )
            corpus = Corpus(Vocabulary(str(i) for i in range(W)), docs, infer_label_kind(labels))
        else:
            corpus = build_corpus(zip(labels, ([str(t) for t in doc] for doc in X)))
    if require_labels and not corpus.is_labeled:
        raise ValueError("every training document needs a label")
    return corpus


class SupervisedLDA(RegressorMixin, TransformerMixin, BaseEstimator):
    """Supervised LDA fitted by collapsed Gibbs sampling with stochastic EM.

    ``predict`` returns the real-valued response estimate; for binary
    labels threshold it at 0.5 (see :meth:`predict_set` for class labels).
    ``transform`` returns the tail-averaged empirical topic proportions.
    """

    def __init__(
        self,
        n_topics=10,
        alpha=1.0,
        beta=0.01,
        mu=0.0,
        sigma=1.0,
        rho=1.0,
        link=IDENTITY_LINK,
        n_sweeps=200,
        burn_in=100,
        eta_update_every=1,
        predict_sweeps=50,
        predict_burn_in=25,
        random_state=0,
    ):
        self.n_topics = n_topics
        self.alpha = alpha
        self.beta = beta
        self.mu = mu
        self.sigma = sigma
        self.rho = rho
        self.link = link
        self.n_sweeps = n_sweeps
        self.burn_in = burn_in
        self.eta_update_every = eta_update_every
        self.predict_sweeps = predict_sweeps
        self.predict_burn_in = predict_burn_in
        self.random_state = random_state

    def _seed(self) -> int:
        if self.random_state is None:
            return int(np.random.SeedSequence().generate_state(1)[0])
        if isinstance(self.random_state, numbers.Integral):
            return int(self.random_state)
        raise ValueError("random_state must be an int or None")

    def _hyper(self, corpus: Corpus) -> Hyperparams:
        return Hyperparams(
            n_topics=self.n_topics, alpha=self.alpha, beta=self.beta, mu=self.mu,
            sigma=self.sigma, rho=self.rho, label_kind=corpus.label_kind, link=self.link,
        )

    def _train_schedule(self) -> TrainSchedule:
        return TrainSchedule(self.n_sweeps, self.burn_in, self.eta_update_every)

    def _predict_schedule(self) -> PredictSchedule:
        return PredictSchedule(self.predict_sweeps, self.predict_burn_in)

    def fit(self, X, y=None):
        corpus = check_documents(X, y, require_labels=True)
        self.seed_ = self._seed()
        self.model_, self.zbar_train_ = fit(
            corpus, self._hyper(corpus), self._train_schedule(), self.seed_
        )
        self.label_kind_ = corpus.label_kind
        return self

    @property
    def eta_(self) -> np.ndarray:
        return self.model_.eta

    @property
    def phi_(self) -> np.ndarray:
        return self.model_.phi

    def predict_set(self, X) -> PredictionSet:
        check_is_fitted(self, "model_")
        return predict_corpus(self.model_, check_documents(X), self._predict_schedule(), self.seed_)

    def predict(self, X) -> np.ndarray:
        return self.predict_set(X).y_hat

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        corpus, _, _ = remap_to_vocabulary(check_documents(X), self.model_.vocabulary)
        zbar, _ = sample_test_topics(self.model_, corpus, self._predict_schedule(), self.seed_)
        return zbar


class ParallelSupervisedLDA(SupervisedLDA):
    """Embarrassingly parallel supervised LDA.

    Training documents are split into ``n_shards`` shards fitted
    independently (on up to ``n_jobs`` threads). ``combiner`` selects how
    shard results become one prediction: ``"simple"`` or ``"weighted"``
    average the shard predictions; ``"naive"`` pools shard topic counts
    into a single model first.
    """

    def __init__(
        self,
        n_shards=4,
        combiner="simple",
        n_jobs=None,
        n_topics=10,
        alpha=1.0,
        beta=0.01,
        mu=0.0,
        sigma=1.0,
        rho=1.0,
        link=IDENTITY_LINK,
        n_sweeps=200,
        burn_in=100,
        eta_update_every=1,
        predict_sweeps=50,
        predict_burn_in=25,
        random_state=0,
    ):
        super().__init__(
            n_topics=n_topics, alpha=alpha, beta=beta, mu=mu, sigma=sigma, rho=rho, link=link,
            n_sweeps=n_sweeps, burn_in=burn_in, eta_update_every=eta_update_every,
            predict_sweeps=predict_sweeps, predict_burn_in=predict_burn_in,
            random_state=random_state,
        )
        self.n_shards = n_shards
        self.combiner = combiner
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        corpus = check_documents(X, y, require_labels=True)
        combiner = CombinerKind(self.combiner)
        self.seed_ = self._seed()
        hyper = self._hyper(corpus)
        shards = partition(corpus, self.n_shards, self.seed_)
        fits = fit_shards(shards, hyper, self._train_schedule(), self.seed_, self.n_jobs)
        self.label_kind_ = corpus.label_kind
        if combiner is CombinerKind.NAIVE:
            self.model_ = naive_combine_fit([(f.state, s) for f, s in zip(fits, shards)], hyper)
            self.shard_models_ = [self.model_]
            self.weights_ = np.ones(1)
        else:
            self.shard_models_ = [f.model for f in fits]
            self.model_ = self.shard_models_[0]
            if combiner is CombinerKind.WEIGHTED:
                self.weights_ = shard_training_weights(
                    fits, corpus, self._predict_schedule(), self.seed_, self.n_jobs
                )
            else:
                self.weights_ = np.full(len(fits), 1.0 / len(fits))
        return self

    def predict_set(self, X) -> PredictionSet:
        check_is_fitted(self, "shard_models_")
        corpus = check_documents(X)
        preds = predict_shards(
            self.shard_models_, corpus, self._predict_schedule(), self.seed_, self.n_jobs
        )
        y_hat = self.weights_ @ np.stack([p.y_hat for p in preds])
        class_hat = classify(y_hat) if self.label_kind_ == BINARY else None
        return PredictionSet(corpus.doc_ids, y_hat, CombinerKind(self.combiner).value, class_hat)

    def transform(self, X) -> np.ndarray:
        raise NotImplementedError("shard topic spaces are not aligned; use a SupervisedLDA per shard")
