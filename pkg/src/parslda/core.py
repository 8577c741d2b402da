"""Single-machine supervised LDA: collapsed Gibbs sweeps alternated with an
exact ridge update of the regression weights (stochastic EM)."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import scipy.linalg

from . import _kernels
from .corpus import BINARY, CONTINUOUS, LABEL_KINDS, Corpus, Vocabulary

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
IDENTITY_LINK = "identity"
LOGIT_LINK = "logit"
LOGIT_EPSILON = 0.01


class CountStateError(RuntimeError):
    """Stored count tables disagree with the topic assignments."""


@dataclass(frozen=True)
class Hyperparams:
    """Priors and dimensions of the model.

    ``sigma`` and ``rho`` are variances (prior on each regression weight and
    response noise respectively), not standard deviations.
    """

    n_topics: int = 10
    alpha: float = 1.0
    beta: float = 0.01
    mu: float = 0.0
    sigma: float = 1.0
    rho: float = 1.0
    label_kind: str = CONTINUOUS
    link: str = IDENTITY_LINK

    def __post_init__(self):
        if int(self.n_topics) != self.n_topics or self.n_topics < 1:
            raise ValueError(f"n_topics must be a positive integer, got {self.n_topics}")
        object.__setattr__(self, "n_topics", int(self.n_topics))
        for name in ("alpha", "beta", "sigma", "rho"):
            value = float(getattr(self, name))
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be finite and > 0, got {value}")
            object.__setattr__(self, name, value)
        if not math.isfinite(self.mu):
            raise ValueError("mu must be finite")
        object.__setattr__(self, "mu", float(self.mu))
        if self.label_kind not in LABEL_KINDS:
            raise ValueError(f"unknown label_kind {self.label_kind!r}")
        if self.link not in (IDENTITY_LINK, LOGIT_LINK):
            raise ValueError(f"unknown link {self.link!r}")
        if self.link == LOGIT_LINK and self.label_kind != BINARY:
            raise ValueError("the logit link requires binary labels")

    @property
    def T(self) -> int:
        return self.n_topics

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Hyperparams":
        return cls(**data)

    def response(self, labels: np.ndarray) -> np.ndarray:
        """Map labels to the real-valued response the Gaussian model sees."""
        y = np.asarray(labels, dtype=np.float64)
        if self.link == LOGIT_LINK:
            lo = math.log(LOGIT_EPSILON / (1 - LOGIT_EPSILON))
            return np.where(y >= 0.5, -lo, lo)
        return y


@dataclass(frozen=True)
class TrainSchedule:
    sweeps: int = 200
    burn_in: int = 100
    eta_update_every: int = 1
    average_phi: bool = False
    supervised_sampling: bool = True

    def __post_init__(self):
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")
        if not 0 <= self.burn_in < self.sweeps:
            raise ValueError(f"burn_in must lie in [0, sweeps), got {self.burn_in}")
        if self.eta_update_every < 1:
            raise ValueError("eta_update_every must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CountState:
    """Topic assignments for a tokenized corpus plus the count tables the
    Gibbs conditional reads.

    ``z`` and ``words`` are flat over all tokens; document ``d`` owns
    positions ``offsets[d]:offsets[d + 1]``.
    """

    words: np.ndarray
    offsets: np.ndarray
    z: np.ndarray
    N_dt: np.ndarray
    N_tw: np.ndarray
    N_t: np.ndarray
    N_d: np.ndarray

    @classmethod
    def from_assignments(cls, words, offsets, z, T: int, W: int) -> "CountState":
        words = np.ascontiguousarray(words, dtype=np.int64)
        offsets = np.ascontiguousarray(offsets, dtype=np.int64)
        z = np.ascontiguousarray(z, dtype=np.int64)
        if z.shape != words.shape:
            raise ValueError("z must align with tokens")
        if z.size and (z.min() < 0 or z.max() >= T):
            raise ValueError(f"topic ids must lie in [0, {T})")
        N_dt, N_tw = _kernels.count_tables(words, offsets, z, T, W)
        return cls(words, offsets, z, N_dt, N_tw, N_tw.sum(axis=1), np.diff(offsets))

    @property
    def D(self) -> int:
        return self.offsets.size - 1

    @property
    def T(self) -> int:
        return self.N_tw.shape[0]

    @property
    def W(self) -> int:
        return self.N_tw.shape[1]

    def doc_assignments(self, d: int) -> np.ndarray:
        return self.z[self.offsets[d] : self.offsets[d + 1]]

    def rebuilt(self) -> "CountState":
        return CountState.from_assignments(self.words, self.offsets, self.z, self.T, self.W)

    def check(self) -> None:
        """Raise :class:`CountStateError` unless every table matches a rebuild from z."""
        fresh = self.rebuilt()
        for name in ("N_dt", "N_tw", "N_t", "N_d"):
            if not np.array_equal(getattr(self, name), getattr(fresh, name)):
                raise CountStateError(f"{name} is inconsistent with the assignments")

    def copy(self) -> "CountState":
        return CountState(
            self.words, self.offsets, self.z.copy(), self.N_dt.copy(),
            self.N_tw.copy(), self.N_t.copy(), self.N_d,
        )

    def permuted(self, pi) -> "CountState":
        """Relabel topic ``t`` as ``pi[t]``."""
        pi = np.asarray(pi, dtype=np.int64)
        inv = np.argsort(pi)
        return CountState(
            self.words, self.offsets, pi[self.z], self.N_dt[:, inv].copy(),
            self.N_tw[inv].copy(), self.N_t[inv].copy(), self.N_d,
        )


@dataclass(frozen=True)
class TopicConditional:
    """Unnormalized topic weights for one token (max weight is 1) and the
    response mean implied by each candidate topic."""

    weights: np.ndarray
    response_means: np.ndarray

    @property
    def probabilities(self) -> np.ndarray:
        return self.weights / self.weights.sum()


@dataclass(frozen=True, eq=False)
class FittedModel:
    phi: np.ndarray
    eta: np.ndarray
    hyper: Hyperparams
    vocabulary: Vocabulary
    schedule: TrainSchedule | None = None
    seed: int | None = None

    def __post_init__(self):
        phi = np.array(self.phi, dtype=np.float64)
        eta = np.array(self.eta, dtype=np.float64)
        T, W = self.hyper.n_topics, self.vocabulary.W
        if phi.shape != (T, W):
            raise ValueError(f"phi must have shape {(T, W)}, got {phi.shape}")
        if eta.shape != (T,):
            raise ValueError(f"eta must have shape {(T,)}, got {eta.shape}")
        if not np.isfinite(eta).all():
            raise ValueError("eta must be finite")
        if np.any(phi <= 0) or np.any(np.abs(phi.sum(axis=1) - 1) > 1e-9):
            raise ValueError("phi rows must be strictly positive distributions")
        phi.setflags(write=False)
        eta.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "eta", eta)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FittedModel):
            return NotImplemented
        return (
            np.array_equal(self.phi, other.phi)
            and np.array_equal(self.eta, other.eta)
            and self.hyper == other.hyper
            and self.vocabulary == other.vocabulary
            and self.schedule == other.schedule
            and self.seed == other.seed
        )

    __hash__ = None  # type: ignore[assignment]

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "hyper": self.hyper.to_dict(),
            "eta": self.eta.tolist(),
            "phi": self.phi.tolist(),
            "vocabulary": list(self.vocabulary.words),
            "schedule": None if self.schedule is None else self.schedule.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FittedModel":
        if data.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {data.get('format_version')!r}")
        schedule = data.get("schedule")
        return cls(
            phi=np.array(data["phi"], dtype=np.float64),
            eta=np.array(data["eta"], dtype=np.float64),
            hyper=Hyperparams.from_dict(data["hyper"]),
            vocabulary=Vocabulary(data["vocabulary"]),
            schedule=None if schedule is None else TrainSchedule(**schedule),
            seed=data.get("seed"),
        )


def save_model(model: FittedModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()), encoding="utf-8")


def load_model(path: str | Path) -> FittedModel:
    return FittedModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def init_assignments(corpus: Corpus, hyper: Hyperparams, seed) -> CountState:
    """Assign every token a uniformly random topic.

    ``seed`` may be an int or a ``numpy.random.Generator`` (consumed in place).
    """
    if corpus.D == 0:
        raise ValueError("cannot initialize an empty corpus")
    rng = np.random.default_rng(seed)
    words, offsets = corpus.flat
    z = rng.integers(0, hyper.n_topics, size=words.size)
    return CountState.from_assignments(words, offsets, z, hyper.n_topics, corpus.W)


def conditional_topic_weights(
    state: CountState, d: int, n: int, eta, y_d: float, hyper: Hyperparams
) -> TopicConditional:
    """Training-time conditional for token ``n`` of document ``d``.

    The counts must currently include the token; it is excluded here.
    Weights are computed in log space and exponentiated after subtracting
    the maximum.
    """
    i = state.offsets[d] + n
    if not state.offsets[d] <= i < state.offsets[d + 1]:
        raise IndexError(f"token {n} out of range for document {d}")
    eta = np.asarray(eta, dtype=np.float64)
    w = state.words[i]
    old = state.z[i]
    T, W = state.T, state.W
    Nd = state.N_d[d]

    ndt = state.N_dt[d].astype(np.float64)
    ntw = state.N_tw[:, w].astype(np.float64)
    nt = state.N_t.astype(np.float64)
    ndt[old] -= 1
    ntw[old] -= 1
    nt[old] -= 1

    # correctly rounded sum: result independent of topic order
    means = (math.fsum(eta * ndt) + eta) / Nd
    log_w = (
        -((y_d - means) ** 2) / (2.0 * hyper.rho)
        + np.log(ndt + hyper.alpha)
        - math.log(Nd - 1 + T * hyper.alpha)
        + np.log(ntw + hyper.beta)
        - np.log(nt + W * hyper.beta)
    )
    weights = np.exp(log_w - log_w.max())
    if not np.isfinite(weights).all():
        raise FloatingPointError(f"non-finite topic weight at doc {d}, token {n}")
    return TopicConditional(weights, means)


def gibbs_sweep_train(
    state: CountState, corpus: Corpus, eta, hyper: Hyperparams, rng, y=None
) -> CountState:
    """Resample every token once, in document then token order. Updates ``state`` in place.

    ``y`` overrides the responses derived from ``corpus`` labels.
    """
    if state.T == 1:
        return state
    y = hyper.response(corpus.labels) if y is None else np.ascontiguousarray(y, dtype=np.float64)
    u = rng.random(state.z.size)
    _kernels.train_sweep(
        state.words, state.offsets, state.z, state.N_dt, state.N_tw, state.N_t,
        np.ascontiguousarray(eta, dtype=np.float64), y, hyper.alpha, hyper.beta, hyper.rho, u,
    )
    return state


def regression_objective(eta, zbar, y, hyper: Hyperparams) -> float:
    """Penalized log-likelihood maximized by :func:`optimize_eta`."""
    eta = np.asarray(eta, dtype=np.float64)
    resid = np.asarray(y) - np.asarray(zbar) @ eta
    return float(
        -(resid @ resid) / (2 * hyper.rho) - ((eta - hyper.mu) @ (eta - hyper.mu)) / (2 * hyper.sigma)
    )


def optimize_eta(zbar, y, hyper: Hyperparams) -> np.ndarray:
    """Exact maximizer of the penalized regression likelihood.

    Solves ``(Z'Z/rho + I/sigma) eta = Z'y/rho + mu/sigma`` by Cholesky.
    """
    Z = np.asarray(zbar, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] != y.size or Z.shape[0] == 0:
        raise ValueError(f"zbar {Z.shape} and y {y.shape} are incompatible")
    T = Z.shape[1]
    A = Z.T @ Z / hyper.rho + np.eye(T) / hyper.sigma
    b = Z.T @ y / hyper.rho + hyper.mu / hyper.sigma
    try:
        eta = scipy.linalg.cho_solve(scipy.linalg.cho_factor(A), b)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eta system is not positive definite: {exc}") from exc
    resid = np.linalg.norm(A @ eta - b)
    if not np.isfinite(eta).all() or resid > 1e-8 * max(np.linalg.norm(b), 1.0):
        raise RuntimeError(f"eta solve residual {resid:.3g} too large")
    return eta


def estimate_phi(state: CountState, hyper: Hyperparams, W: int | None = None) -> np.ndarray:
    W = state.W if W is None else W
    return (state.N_tw + hyper.beta) / (state.N_t[:, None] + W * hyper.beta)


def doc_topic_means(state: CountState) -> np.ndarray:
    return state.N_dt / state.N_d[:, None]


def fit(
    corpus: Corpus,
    hyper: Hyperparams,
    schedule: TrainSchedule = TrainSchedule(),
    seed: int = 0,
    debug: bool = False,
    return_state: bool = False,
):
    """Train on a fully labeled corpus.

    Returns ``(model, zbar)`` where ``zbar`` is the final empirical
    doc-topic matrix, or ``(model, zbar, state)`` with ``return_state``.
    With ``debug`` the count tables are rebuilt and compared after every sweep.
    """
    if corpus.D == 0:
        raise ValueError("cannot fit an empty corpus")
    if not corpus.is_labeled:
        raise ValueError("training documents must all be labeled")
    if hyper.label_kind == BINARY and corpus.label_kind != BINARY:
        raise ValueError("binary hyperparameters given a continuous corpus")
    rng = np.random.default_rng(seed)
    y = hyper.response(corpus.labels)
    state = init_assignments(corpus, hyper, rng)
    eta = np.full(hyper.n_topics, hyper.mu)
    phi_sum = np.zeros((hyper.n_topics, corpus.W))
    n_avg = 0

    # eta = 0, y = 0 makes the response factor equal across topics: plain LDA sweeps
    y_sweep = y if schedule.supervised_sampling else np.zeros_like(y)
    zeros = np.zeros(hyper.n_topics)
    for sweep in range(1, schedule.sweeps + 1):
        gibbs_sweep_train(state, corpus, eta if schedule.supervised_sampling else zeros, hyper, rng, y_sweep)
        if debug:
            state.check()
        if sweep % schedule.eta_update_every == 0:
            eta = optimize_eta(doc_topic_means(state), y, hyper)
        if schedule.average_phi and sweep > schedule.burn_in:
            phi_sum += estimate_phi(state, hyper)
            n_avg += 1

    zbar = doc_topic_means(state)
    eta = optimize_eta(zbar, y, hyper)
    phi = phi_sum / n_avg if n_avg else estimate_phi(state, hyper)
    model = FittedModel(phi, eta, hyper, corpus.vocabulary, schedule, seed)
    if return_state:
        return model, zbar, state
    return model, zbar
