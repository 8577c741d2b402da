"""Command line entry point: ``parslda {synth,train,predict,ptrain,bench}``.

Every option can also come from a flat JSON config file (``--config``);
precedence is command-line flag > config file > built-in default. The fully
resolved configuration is logged to stderr and can be saved with
``--dump-config`` and replayed as a config file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import core, corpus as corpus_mod, evaluation, parallel, predictor, synthgen
from .core import IDENTITY_LINK, LOGIT_LINK, FittedModel, Hyperparams, TrainSchedule
from .corpus import CONTINUOUS, LABEL_KINDS, Corpus, CorpusFormatError
from .predictor import PredictionSet, PredictSchedule

logger = logging.getLogger("parslda")

ENSEMBLE_KIND = "ensemble"


class CliError(Exception):
    exit_code = 1
    prefix = "error"

    def __str__(self) -> str:
        return f"{self.prefix}: {super().__str__()}"


class UsageError(CliError):
    exit_code = 2
    prefix = "usage error"


class ConfigError(CliError):
    exit_code = 3
    prefix = "config error"


class FileError(CliError):
    exit_code = 4
    prefix = "file error"


class DataError(CliError):
    exit_code = 5
    prefix = "data error"


@dataclass(frozen=True)
class Option:
    name: str
    type: Callable | None
    default: Any
    help: str
    required: bool = False
    choices: tuple | None = None

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")

    @property
    def is_bool(self) -> bool:
        return self.type is bool


def _opts(*specs) -> list[Option]:
    return [Option(*s) if isinstance(s, tuple) else s for s in specs]


SEED = Option("seed", int, 0, "base random seed")
THREADS = Option("threads", int, None, "cap on worker threads (default: number of shards)")
CORPUS_IN = _opts(
    Option("corpus", str, None, "corpus file", required=True),
    Option("format", str, "tsv-tokens", "corpus file format", choices=("tsv-tokens", "raw-text")),
    Option("min_doc_fraction", float, 0.02, "drop words in fewer than this fraction of documents"),
)
HYPER = _opts(
    ("topics", int, 10, "number of topics"),
    ("alpha", float, 1.0, "document-topic Dirichlet concentration"),
    ("beta", float, 0.01, "topic-word Dirichlet concentration"),
    ("mu", float, 0.0, "prior mean of the regression weights"),
    ("sigma", float, 1.0, "prior variance of the regression weights"),
    ("rho", float, 1.0, "response noise variance"),
    ("logit_link", bool, False, "binary labels: regress on logit-transformed labels"),
)
TRAIN_SCHED = _opts(
    ("sweeps", int, 200, "training sweeps"),
    ("burn_in", int, 100, "training burn-in sweeps (used with --average-phi)"),
    ("eta_every", int, 1, "update regression weights every N sweeps"),
    ("average_phi", bool, False, "average topic-word estimates over post-burn-in sweeps"),
    ("unsupervised_sampling", bool, False, "sample topics ignoring labels; fit eta only at the end"),
)
PREDICT_SCHED = _opts(
    ("predict_sweeps", int, 50, "test-time sweeps"),
    ("predict_burn_in", int, 25, "test-time burn-in sweeps"),
    ("average_tail", bool, True, "average topic proportions over post-burn-in sweeps"),
)
SPLIT = _opts(("train_fraction", float, 0.8, "training fraction when no test corpus is given"))
SHARDS = _opts(
    ("shards", int, 4, "number of shards M"),
    Option("combiner", str, "simple", "shard combination rule", choices=("naive", "simple", "weighted")),
)

COMMANDS: dict[str, tuple[str, list[Option]]] = {
    "synth": (
        "generate a synthetic corpus and its ground truth",
        _opts(
            Option("out_corpus", str, None, "corpus TSV to write", required=True),
            Option("out_truth", str, None, "ground-truth JSON to write", required=True),
            ("topics", int, 3, "number of topics"),
            ("words", int, synthgen.DEFAULT_W, "vocabulary size"),
            ("docs", int, synthgen.DEFAULT_D, "number of documents"),
            ("doc_length", int, synthgen.DEFAULT_N_PER_DOC, "tokens per document"),
            ("alpha", float, 0.5, "document-topic Dirichlet concentration"),
            ("beta", float, 0.1, "topic-word Dirichlet concentration"),
            ("mu", float, 0.0, "prior mean of the regression weights"),
            ("sigma", float, 1.0, "prior variance of the regression weights"),
            ("rho", float, 0.25, "response noise variance"),
            Option("label_kind", str, CONTINUOUS, "label type", choices=LABEL_KINDS),
            SEED,
        ),
    ),
    "train": (
        "fit a single (non-parallel) model",
        [*CORPUS_IN, *HYPER, *TRAIN_SCHED, SEED,
         Option("out_model", str, None, "model JSON to write", required=True)],
    ),
    "predict": (
        "predict a corpus with a model or shard ensemble file",
        _opts(
            Option("model", str, None, "model or ensemble JSON", required=True),
            Option("corpus", str, None, "corpus file", required=True),
            Option("format", str, "tsv-tokens", "corpus file format", choices=("tsv-tokens", "raw-text")),
            *PREDICT_SCHED,
            SEED,
            THREADS,
            Option("out_preds", str, None, "predictions TSV to write", required=True),
        ),
    ),
    "ptrain": (
        "sharded training, per-shard prediction and combination",
        [*CORPUS_IN, Option("test_corpus", str, None, "held-out corpus (default: split --corpus)"),
         *SPLIT, *SHARDS, *HYPER, *TRAIN_SCHED, *PREDICT_SCHED, SEED, THREADS,
         Option("out_model", str, None, "model or ensemble JSON to write"),
         Option("out_preds", str, None, "predictions TSV to write", required=True),
         Option("out_timing", str, None, "timing JSON to write (default: stdout)")],
    ),
    "bench": (
        "benchmark non-parallel vs naive/simple/weighted combination",
        [Option("corpus", str, None, "corpus file (default: the synthetic desk-scale instance)"),
         Option("format", str, "tsv-tokens", "corpus file format", choices=("tsv-tokens", "raw-text")),
         Option("min_doc_fraction", float, 0.02, "drop words in fewer than this fraction of documents"),
         Option("label_kind", str, CONTINUOUS, "label type of the synthetic instance", choices=LABEL_KINDS),
         *SPLIT, Option("shards", int, 4, "number of shards M"),
         ("repeats", int, 10, "repeats to average over"),
         ("stress", bool, True, "also run naive combination on randomly relabeled shards"),
         *HYPER, *TRAIN_SCHED, *PREDICT_SCHED, SEED, THREADS,
         Option("out_report", str, None, "report JSON to write", required=True),
         Option("out_csv", str, None, "per-repeat CSV to write")],
    ),
}
COMMANDS = {name: (help_text, _opts(*opts)) for name, (help_text, opts) in COMMANDS.items()}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="parslda", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    parser.subparsers = {}
    for name, (help_text, options) in COMMANDS.items():
        p = parser.subparsers[name] = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="flat JSON config file")
        p.add_argument("--dump-config", help="write the resolved config as JSON")
        for opt in options:
            kwargs = {"dest": opt.name, "default": None, "help": f"{opt.help} (default: {opt.default})"}
            if opt.is_bool:
                kwargs["action"] = argparse.BooleanOptionalAction
            else:
                kwargs["type"] = opt.type
                if opt.choices:
                    kwargs["choices"] = opt.choices
            p.add_argument(opt.flag, **kwargs)
    return parser


def _coerce(opt: Option, value: Any) -> Any:
    if value is None:
        return None
    if opt.is_bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{opt.name} must be true or false")
        return value
    try:
        if opt.type is int and (isinstance(value, bool) or float(value) != int(value)):
            raise ValueError
        value = opt.type(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{opt.name}: cannot interpret {value!r} as {opt.type.__name__}") from None
    if opt.choices and value not in opt.choices:
        raise ConfigError(f"{opt.name} must be one of {opt.choices}, got {value!r}")
    return value


def resolve_config(command: str, args: argparse.Namespace) -> dict[str, Any]:
    """Merge defaults, the config file and explicit flags."""
    options = COMMANDS[command][1]
    known = {o.name: o for o in options}
    resolved = {o.name: o.default for o in options}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise FileError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{args.config} must hold a JSON object")
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown keys for '{command}': {', '.join(unknown)}")
        for key, value in data.items():
            resolved[key] = _coerce(known[key], value)
    for opt in options:
        value = getattr(args, opt.name)
        if value is not None:
            resolved[opt.name] = value
    missing = [known[k].flag for k, v in resolved.items() if known[k].required and v is None]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}")
    return resolved


def _hyper(cfg: dict, label_kind: str) -> Hyperparams:
    try:
        return Hyperparams(
            n_topics=cfg["topics"], alpha=cfg["alpha"], beta=cfg["beta"], mu=cfg["mu"],
            sigma=cfg["sigma"], rho=cfg["rho"], label_kind=label_kind,
            link=LOGIT_LINK if cfg.get("logit_link") else IDENTITY_LINK,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _train_schedule(cfg: dict) -> TrainSchedule:
    try:
        return TrainSchedule(
            cfg["sweeps"], cfg["burn_in"], cfg["eta_every"], cfg["average_phi"],
            supervised_sampling=not cfg["unsupervised_sampling"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _predict_schedule(cfg: dict) -> PredictSchedule:
    try:
        return PredictSchedule(cfg["predict_sweeps"], cfg["predict_burn_in"], cfg["average_tail"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load(path: str, fmt: str) -> Corpus:
    try:
        return corpus_mod.load_corpus(path, fmt)
    except OSError as exc:
        raise FileError(str(exc)) from exc


def _load_pruned(cfg: dict) -> Corpus:
    corpus = _load(cfg["corpus"], cfg["format"])
    try:
        return corpus_mod.prune_vocabulary(corpus, cfg["min_doc_fraction"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _split(cfg: dict, corpus: Corpus) -> tuple[Corpus, Corpus]:
    n_train = int(round(cfg["train_fraction"] * corpus.D))
    try:
        return corpus_mod.train_test_split(corpus, n_train, cfg["seed"])
    except ValueError as exc:
        raise ConfigError(f"train_fraction {cfg['train_fraction']}: {exc}") from exc


def _write_json(path: str, data: Any) -> None:
    Path(path).write_text(json.dumps(data), encoding="utf-8")


def cmd_synth(cfg: dict) -> None:
    hyper = Hyperparams(
        n_topics=cfg["topics"], alpha=cfg["alpha"], beta=cfg["beta"], mu=cfg["mu"],
        sigma=cfg["sigma"], rho=cfg["rho"], label_kind=cfg["label_kind"],
    )
    corpus, truth = synthgen.generate_corpus(hyper, cfg["docs"], cfg["doc_length"], cfg["words"], cfg["seed"])
    corpus_mod.write_corpus(corpus, cfg["out_corpus"])
    synthgen.save_truth(truth, cfg["out_truth"])


def cmd_train(cfg: dict) -> None:
    corpus = _load_pruned(cfg)
    model, _ = core.fit(corpus, _hyper(cfg, corpus.label_kind), _train_schedule(cfg), cfg["seed"])
    core.save_model(model, cfg["out_model"])


def ensemble_to_dict(models: list[FittedModel], weights: np.ndarray, combiner: str) -> dict:
    return {
        "format_version": core.FORMAT_VERSION,
        "kind": ENSEMBLE_KIND,
        "combiner": combiner,
        "weights": [float(w) for w in weights],
        "models": [m.to_dict() for m in models],
    }


def predict_ensemble(
    models: list[FittedModel], weights, combiner: str, corpus: Corpus,
    schedule: PredictSchedule, seed: int, n_jobs: int | None,
) -> PredictionSet:
    local = parallel.predict_shards(models, corpus, schedule, seed, n_jobs)
    weights = np.asarray(weights, dtype=np.float64)
    if combiner == parallel.CombinerKind.SIMPLE.value:
        return parallel.simple_combine(local)
    return parallel.weighted_average(local, weights, combiner)


def cmd_predict(cfg: dict) -> None:
    try:
        data = json.loads(Path(cfg["model"]).read_text(encoding="utf-8"))
    except OSError as exc:
        raise FileError(f"cannot read model {cfg['model']}: {exc}") from exc
    corpus = _load(cfg["corpus"], cfg["format"])
    schedule = _predict_schedule(cfg)
    try:
        if data.get("kind") == ENSEMBLE_KIND:
            models = [FittedModel.from_dict(m) for m in data["models"]]
            preds = predict_ensemble(
                models, data["weights"], data["combiner"], corpus, schedule, cfg["seed"], cfg["threads"]
            )
        else:
            preds = predictor.predict_corpus(FittedModel.from_dict(data), corpus, schedule, cfg["seed"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{cfg['model']}: {exc}") from exc
    predictor.write_predictions(preds, cfg["out_preds"])


def cmd_ptrain(cfg: dict) -> None:
    corpus = _load_pruned(cfg)
    if cfg["test_corpus"]:
        train, test = corpus, _load(cfg["test_corpus"], cfg["format"])
    else:
        train, test = _split(cfg, corpus)
    hyper = _hyper(cfg, train.label_kind)
    M = cfg["shards"]
    if not 1 <= M <= train.D:
        raise ConfigError(f"shards must lie in [1, {train.D}], got {M}")
    combiner = parallel.CombinerKind(cfg["combiner"])
    pschedule = _predict_schedule(cfg)

    t0 = time.perf_counter()
    shards = corpus_mod.partition(train, M, cfg["seed"])
    partition_ms = (time.perf_counter() - t0) * 1e3
    start = time.perf_counter()
    fits = parallel.fit_shards(shards, hyper, _train_schedule(cfg), cfg["seed"], cfg["threads"])
    fit_wall_ms = (time.perf_counter() - start) * 1e3
    preds, timing, _ = parallel.combine_from_fits(
        fits, shards, train, test, combiner, hyper, pschedule, cfg["seed"], cfg["threads"]
    )
    timing.partition_ms = partition_ms
    timing.fit_ms = [f.fit_seconds * 1e3 for f in fits]
    timing.fit_wall_ms = fit_wall_ms
    timing.total_ms = (time.perf_counter() - t0) * 1e3

    predictor.write_predictions(preds, cfg["out_preds"])
    if cfg["out_model"]:
        if combiner is parallel.CombinerKind.NAIVE:
            model = parallel.naive_combine_fit([(f.state, s) for f, s in zip(fits, shards)], hyper)
            core.save_model(model, cfg["out_model"])
        else:
            if combiner is parallel.CombinerKind.WEIGHTED:
                weights = (
                    parallel.inverse_mse_weights([f.train_metric for f in fits])
                    if hyper.label_kind == CONTINUOUS
                    else parallel.accuracy_weights([f.train_metric for f in fits])
                )
            else:
                weights = np.full(M, 1.0 / M)
            _write_json(cfg["out_model"], ensemble_to_dict([f.model for f in fits], weights, combiner.value))
    report = timing.to_dict()
    if test.is_labeled:
        report.update(evaluation.score(test, preds))
    if cfg["out_timing"]:
        _write_json(cfg["out_timing"], report)
    else:
        print(json.dumps(report))


def cmd_bench(cfg: dict) -> None:
    if cfg["corpus"]:
        corpus = _load_pruned(cfg)
    else:
        corpus, _ = synthgen.default_instance(cfg["seed"], cfg["label_kind"])
    train, test = _split(cfg, corpus)
    report = evaluation.run_benchmark(
        train, test, cfg["shards"], _hyper(cfg, train.label_kind), _train_schedule(cfg),
        _predict_schedule(cfg), cfg["repeats"], cfg["seed"], stress=cfg["stress"], n_jobs=cfg["threads"],
    )
    report.config["resolved"] = cfg
    report.save(cfg["out_report"])
    if cfg["out_csv"]:
        report.write_csv(cfg["out_csv"])
    metric = "test_accuracy" if train.label_kind == corpus_mod.BINARY else "test_mse"
    for alg, rec in report.mean().items():
        print(f"{alg:15s} {metric}={rec[metric]:.4f} total_ms={rec['total_ms']:.1f}")


HANDLERS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "ptrain": cmd_ptrain,
    "bench": cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = None
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("a subcommand is required")
        cfg = resolve_config(args.command, args)
        logger.info("resolved config: %s", json.dumps(cfg, sort_keys=True))
        if args.dump_config:
            _write_json(args.dump_config, cfg)
        HANDLERS[args.command](cfg)
    except UsageError as exc:
        sub = parser.subparsers.get(getattr(args, "command", None)) if args is not None else None
        if sub is not None:
            sub.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return exc.exit_code
    except CliError as exc:
        print(exc, file=sys.stderr)
        return exc.exit_code
    except CorpusFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except OSError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return FileError.exit_code
    except (ValueError, parallel.ShardError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
