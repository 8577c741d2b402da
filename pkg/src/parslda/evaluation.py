"""Prediction metrics and the four-way benchmark harness."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .core import Hyperparams, TrainSchedule, fit
from .corpus import BINARY, Corpus, partition
from .parallel import CombinerKind, ShardFit, combine_from_fits, fit_shards
from .predictor import PredictionSet, PredictSchedule, classify, predict_corpus
from .synthgen import permute_model, permute_state, random_permutations

logger = logging.getLogger(__name__)

NONPARALLEL = "nonparallel"
NAIVE_STRESSED = "naive_stressed"


def mse(y, y_hat) -> float:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or y.ndim != 1:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise ValueError("mse of empty vectors")
    r = y - y_hat
    return float(r @ r / y.size)


def accuracy(y, class_hat) -> float:
    y = np.asarray(y)
    c = np.asarray(class_hat)
    if y.shape != c.shape or y.ndim != 1:
        raise ValueError(f"shape mismatch: {y.shape} vs {c.shape}")
    if y.size == 0:
        raise ValueError("accuracy of empty vectors")
    for v in (y, c):
        if not np.isin(v, (0, 1)).all():
            raise ValueError("accuracy needs 0/1 labels")
    return float(np.mean(y == c))


def mse_standard_error(y, preds: PredictionSet) -> float:
    """Monte Carlo standard error of ``mse(y, preds.y_hat)`` by the delta method."""
    if preds.y_hat_se is None:
        raise ValueError("prediction set carries no Monte Carlo standard errors")
    y = np.asarray(y, dtype=np.float64)
    grad = 2.0 * (preds.y_hat - y) / y.size
    return float(np.sqrt(np.sum((grad * preds.y_hat_se) ** 2)))


def score(corpus: Corpus, preds: PredictionSet) -> dict[str, float]:
    out = {"test_mse": mse(corpus.labels, preds.y_hat)}
    if corpus.label_kind == BINARY:
        c = preds.class_hat if preds.class_hat is not None else classify(preds.y_hat)
        out["test_accuracy"] = accuracy(corpus.labels, c)
    return out


def stress_shard_fits(fits: Sequence[ShardFit], rng: np.random.Generator) -> list[ShardFit]:
    """Apply an independent random topic relabeling to each shard (not all identical)."""
    T = fits[0].model.hyper.n_topics
    perms = random_permutations(len(fits), T, rng)
    out = []
    for f, pi in zip(fits, perms):
        inv = np.argsort(pi)
        out.append(
            ShardFit(
                f.shard_id, permute_model(f.model, pi), f.zbar_train[:, inv], permute_state(f.state, pi),
                f.y_train, f.fit_seconds, f.train_metric,
            )
        )
    return out


@dataclass
class BenchReport:
    """Per-repeat benchmark records plus their means.

    ``runs[r][algorithm]`` maps metric/timing names to numbers (``fit_ms``
    is a per-shard list).
    """

    config: dict[str, Any]
    runs: list[dict[str, dict[str, Any]]] = field(default_factory=list)

    @property
    def repeats(self) -> int:
        return len(self.runs)

    @property
    def algorithms(self) -> list[str]:
        return list(self.runs[0]) if self.runs else []

    def mean(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for alg in self.algorithms:
            keys = [k for k, v in self.runs[0][alg].items() if isinstance(v, (int, float))]
            out[alg] = {k: float(np.mean([run[alg][k] for run in self.runs])) for k in keys}
        return out

    def to_dict(self) -> dict[str, Any]:
        return {"config": self.config, "runs": self.runs, "mean": self.mean()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "BenchReport":
        return cls(config=data["config"], runs=data["runs"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BenchReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def write_csv(self, path: str | Path) -> None:
        fields = sorted(
            {k for run in self.runs for rec in run.values() for k, v in rec.items() if not isinstance(v, list)}
        )
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["repeat", "algorithm", *fields])
            for r, run in enumerate(self.runs):
                for alg, rec in run.items():
                    writer.writerow([r, alg, *(rec.get(k, "") for k in fields)])


def _ms(start: float) -> float:
    return (time.perf_counter() - start) * 1e3


def run_benchmark(
    train: Corpus,
    test: Corpus,
    M: int,
    hyper: Hyperparams,
    train_schedule: TrainSchedule = TrainSchedule(),
    predict_schedule: PredictSchedule = PredictSchedule(),
    repeats: int = 10,
    seed: int = 0,
    combiners: Iterable[str] = ("naive", "simple", "weighted"),
    stress: bool = True,
    n_jobs: int | None = None,
) -> BenchReport:
    """Compare the non-parallel sampler against each shard combiner.

    Repeat ``r`` uses seed ``seed + r`` everywhere. Within a repeat the
    shards are fitted once and shared by every combiner; each combiner's
    total time is partition + parallel fit wall time + its own prediction
    and combination phases. With ``stress`` an extra ``naive_stressed``
    entry pools shard states after independent random topic relabelings.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    combiners = [CombinerKind(c) for c in combiners]
    report = BenchReport(
        config={
            "M": M,
            "repeats": repeats,
            "seed": seed,
            "n_train": train.D,
            "n_test": test.D,
            "hyper": hyper.to_dict(),
            "train_schedule": train_schedule.to_dict(),
            "predict_schedule": vars(predict_schedule).copy(),
            "combiners": [c.value for c in combiners],
            "stress": stress,
        }
    )
    for r in range(repeats):
        s = seed + r
        run: dict[str, dict[str, Any]] = {}

        t0 = time.perf_counter()
        model, zbar = fit(train, hyper, train_schedule, s)
        fit_ms = _ms(t0)
        start = time.perf_counter()
        preds = predict_corpus(model, test, predict_schedule, s)
        predict_ms = _ms(start)
        in_sample = zbar @ model.eta
        run[NONPARALLEL] = {
            "M": 1,
            "seed": s,
            "fit_ms": [fit_ms],
            "fit_wall_ms": fit_ms,
            "predict_ms": predict_ms,
            "combine_ms": 0.0,
            "total_ms": _ms(t0),
            "train_mse": mse(hyper.response(train.labels), in_sample),
            **score(test, preds),
        }

        t0 = time.perf_counter()
        shards = partition(train, M, s)
        partition_ms = _ms(t0)
        start = time.perf_counter()
        fits = fit_shards(shards, hyper, train_schedule, s, n_jobs)
        fit_wall_ms = _ms(start)
        base = {
            "M": M,
            "seed": s,
            "partition_ms": partition_ms,
            "fit_ms": [f.fit_seconds * 1e3 for f in fits],
            "fit_max_ms": max(f.fit_seconds for f in fits) * 1e3,
            "fit_wall_ms": fit_wall_ms,
        }

        variants = [(c.value, c, fits) for c in combiners]
        if stress:
            stressed = stress_shard_fits(fits, np.random.default_rng(s))
            variants.append((NAIVE_STRESSED, CombinerKind.NAIVE, stressed))
        for name, combiner, shard_fits in variants:
            preds, timing, _ = combine_from_fits(
                shard_fits, shards, train, test, combiner, hyper, predict_schedule, s, n_jobs
            )
            rec = dict(base)
            rec.update(
                predict_ms=timing.predict_ms,
                combine_ms=timing.combine_ms,
                total_ms=partition_ms + fit_wall_ms + timing.predict_ms + timing.combine_ms,
                **score(test, preds),
            )
            if combiner is CombinerKind.WEIGHTED:
                rec["shard_train_metrics"] = [f.train_metric for f in shard_fits]
            run[name] = rec
        report.runs.append(run)
        logger.info(
            "repeat %d/%d: %s", r + 1, repeats,
            ", ".join(f"{k}={v['test_mse']:.4f}/{v['total_ms']:.0f}ms" for k, v in run.items()),
        )
    return report
