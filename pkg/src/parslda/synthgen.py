"""Synthetic corpora drawn from the sLDA generative process, and topic
relabeling utilities used to stress-test shard combination."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import CountState, FittedModel, Hyperparams
from .corpus import BINARY, CONTINUOUS, Corpus, Document, Vocabulary, canonicalize, doc_id_for

logger = logging.getLogger(__name__)

DEFAULT_D = 500
DEFAULT_N_PER_DOC = 60
DEFAULT_W = 30


def default_hyper(label_kind: str = CONTINUOUS) -> Hyperparams:
    """The small, well-separated instance used for desk-scale checks."""
    return Hyperparams(
        n_topics=3, alpha=0.5, beta=0.1, mu=0.0, sigma=1.0, rho=0.25, label_kind=label_kind
    )


@dataclass(eq=False)
class GroundTruth:
    """Parameters that generated a synthetic corpus.

    ``phi_true`` columns follow ``words`` (the generator's vocabulary, ``w0``
    .. ``w{W-1}``), which may be a superset of the corpus vocabulary.
    ``z_true`` is flat and aligned with ``Corpus.flat``.
    """

    phi_true: np.ndarray
    eta_true: np.ndarray
    theta_true: np.ndarray
    z_true: np.ndarray
    y_latent: np.ndarray
    words: tuple[str, ...]
    hyper: Hyperparams

    def phi_for(self, vocabulary: Vocabulary) -> np.ndarray:
        """``phi_true`` restricted to ``vocabulary``'s words, in its order, rows renormalized."""
        index = {w: i for i, w in enumerate(self.words)}
        cols = [index[w] for w in vocabulary.words]
        phi = self.phi_true[:, cols]
        return phi / phi.sum(axis=1, keepdims=True)

    def zbar_true(self, offsets: np.ndarray) -> np.ndarray:
        T = self.hyper.n_topics
        D = offsets.size - 1
        doc = np.repeat(np.arange(D), np.diff(offsets))
        counts = np.zeros((D, T))
        np.add.at(counts, (doc, self.z_true), 1)
        return counts / np.diff(offsets)[:, None]

    def to_dict(self) -> dict:
        return {
            "phi_true": self.phi_true.tolist(),
            "eta_true": self.eta_true.tolist(),
            "theta_true": self.theta_true.tolist(),
            "z_true": self.z_true.tolist(),
            "y_latent": self.y_latent.tolist(),
            "words": list(self.words),
            "hyper": self.hyper.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruth":
        return cls(
            phi_true=np.array(data["phi_true"]),
            eta_true=np.array(data["eta_true"]),
            theta_true=np.array(data["theta_true"]),
            z_true=np.array(data["z_true"], dtype=np.int64),
            y_latent=np.array(data["y_latent"]),
            words=tuple(data["words"]),
            hyper=Hyperparams.from_dict(data["hyper"]),
        )


def _dirichlet(rng: np.random.Generator, conc: float, dim: int, size: int) -> np.ndarray:
    out = rng.dirichlet(np.full(dim, conc), size=size)
    return out / out.sum(axis=1, keepdims=True)


def generate_corpus(
    hyper: Hyperparams,
    D: int = DEFAULT_D,
    N_per_doc: int = DEFAULT_N_PER_DOC,
    W: int = DEFAULT_W,
    seed: int = 0,
) -> tuple[Corpus, GroundTruth]:
    """Sample a labeled corpus and the parameters that produced it.

    Binary corpora threshold the sampled response at its median. The
    returned corpus is canonical (vocabulary in first-occurrence order).
    """
    if D < 1 or N_per_doc < 1 or W < 1:
        raise ValueError(f"invalid dimensions D={D}, N_per_doc={N_per_doc}, W={W}")
    T = hyper.n_topics
    if W < T:
        logger.warning("W=%d < T=%d: topics cannot be separated", W, T)
    rng = np.random.default_rng(seed)

    phi = _dirichlet(rng, hyper.beta, W, T)
    eta = rng.normal(hyper.mu, np.sqrt(hyper.sigma), size=T)
    theta = _dirichlet(rng, hyper.alpha, T, D)
    z = np.empty((D, N_per_doc), dtype=np.int64)
    tokens = np.empty((D, N_per_doc), dtype=np.int64)
    for d in range(D):
        z[d] = rng.choice(T, size=N_per_doc, p=theta[d])
        for t in np.unique(z[d]):
            pos = z[d] == t
            tokens[d, pos] = rng.choice(W, size=int(pos.sum()), p=phi[t])
    zbar = np.stack([np.bincount(z[d], minlength=T) for d in range(D)]) / N_per_doc
    y = rng.normal(zbar @ eta, np.sqrt(hyper.rho))

    if hyper.label_kind == BINARY:
        labels = (y > np.median(y)).astype(np.float64)
    else:
        labels = y
    words = tuple(f"w{i}" for i in range(W))
    docs = tuple(Document(doc_id_for(d), tokens[d], float(labels[d])) for d in range(D))
    corpus = canonicalize(Corpus(Vocabulary(words), docs, hyper.label_kind))
    truth = GroundTruth(phi, eta, theta, z.ravel(), y, words, hyper)
    return corpus, truth


def default_instance(seed: int = 0, label_kind: str = CONTINUOUS, D: int = DEFAULT_D):
    return generate_corpus(default_hyper(label_kind), D, DEFAULT_N_PER_DOC, DEFAULT_W, seed)


def save_truth(truth: GroundTruth, path: str | Path) -> None:
    Path(path).write_text(json.dumps(truth.to_dict()), encoding="utf-8")


def load_truth(path: str | Path) -> GroundTruth:
    return GroundTruth.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def check_permutation(pi, T: int) -> np.ndarray:
    pi = np.asarray(pi)
    if pi.shape != (T,) or not np.array_equal(np.sort(pi), np.arange(T)):
        raise ValueError(f"{pi.tolist()} is not a permutation of {T} topics")
    return pi.astype(np.int64)


def permute_model(model: FittedModel, pi) -> FittedModel:
    """Relabel topic ``t`` as ``pi[t]``: row ``t`` of phi moves to row ``pi[t]``."""
    pi = check_permutation(pi, model.hyper.n_topics)
    phi = np.empty_like(model.phi)
    eta = np.empty_like(model.eta)
    phi[pi] = model.phi
    eta[pi] = model.eta
    return replace(model, phi=phi, eta=eta)


def permute_state(state: CountState, pi) -> CountState:
    return state.permuted(check_permutation(pi, state.T))


def random_permutations(M: int, T: int, rng: np.random.Generator) -> list[np.ndarray]:
    """M random topic permutations, redrawn until they are not all identical."""
    if T < 2:
        return [np.arange(T) for _ in range(M)]
    while True:
        perms = [rng.permutation(T) for _ in range(M)]
        if M == 1 or any(not np.array_equal(p, perms[0]) for p in perms[1:]):
            return perms


def tv_matrix(phi_a: np.ndarray, phi_b: np.ndarray) -> np.ndarray:
    """Pairwise total-variation distances between rows of two topic-word matrices."""
    return 0.5 * np.abs(phi_a[:, None, :] - phi_b[None, :, :]).sum(axis=2)


def match_topics(phi_hat: np.ndarray, phi_ref: np.ndarray) -> np.ndarray:
    """Permutation ``pi`` minimizing total TV when estimated topic ``t`` is relabeled ``pi[t]``."""
    rows, cols = linear_sum_assignment(tv_matrix(phi_hat, phi_ref))
    pi = np.empty(phi_hat.shape[0], dtype=np.int64)
    pi[rows] = cols
    return pi


def matched_tv_distance(phi_hat: np.ndarray, phi_ref: np.ndarray) -> float:
    """Mean row-wise TV distance after the best one-to-one topic matching."""
    cost = tv_matrix(phi_hat, phi_ref)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())
