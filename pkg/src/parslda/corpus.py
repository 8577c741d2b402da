"""Labeled document collections: loading, vocabulary pruning, splitting, sharding."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

CONTINUOUS = "continuous"
BINARY = "binary"
LABEL_KINDS = (CONTINUOUS, BINARY)
UNKNOWN_LABEL = "?"

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


class CorpusFormatError(ValueError):
    """Raised when a corpus file or in-memory corpus is malformed."""


class Vocabulary:
    """Ordered bijection between word strings and dense integer ids."""

    def __init__(self, words: Iterable[str]):
        self.words: tuple[str, ...] = tuple(words)
        self.index: dict[str, int] = {}
        for i, w in enumerate(self.words):
            if not w:
                raise CorpusFormatError("vocabulary contains an empty word")
            if any(c.isspace() for c in w):
                raise CorpusFormatError(f"vocabulary word {w!r} contains whitespace")
            if w in self.index:
                raise CorpusFormatError(f"duplicate vocabulary word {w!r}")
            self.index[w] = i

    @property
    def W(self) -> int:
        return len(self.words)

    def __len__(self) -> int:
        return len(self.words)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return self.words == other.words

    def __hash__(self) -> int:
        return hash(self.words)

    def __repr__(self) -> str:
        return f"Vocabulary(W={self.W})"


@dataclass(frozen=True, eq=False)
class Document:
    doc_id: str
    tokens: np.ndarray
    label: float | None = None

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.int64)
        if tokens.ndim != 1 or tokens.size == 0:
            raise CorpusFormatError(f"document {self.doc_id!r} has no tokens")
        if tokens.min() < 0:
            raise CorpusFormatError(f"document {self.doc_id!r} has negative token ids")
        tokens.setflags(write=False)
        object.__setattr__(self, "tokens", tokens)
        if self.label is not None:
            label = float(self.label)
            if not math.isfinite(label):
                raise CorpusFormatError(f"document {self.doc_id!r} has non-finite label")
            object.__setattr__(self, "label", label)

    def __len__(self) -> int:
        return int(self.tokens.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Document):
            return NotImplemented
        return (
            self.doc_id == other.doc_id
            and self.label == other.label
            and np.array_equal(self.tokens, other.tokens)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class Corpus:
    vocabulary: Vocabulary
    docs: tuple[Document, ...]
    label_kind: str = CONTINUOUS

    def __post_init__(self):
        object.__setattr__(self, "docs", tuple(self.docs))
        if self.label_kind not in LABEL_KINDS:
            raise CorpusFormatError(f"unknown label kind {self.label_kind!r}")
        W = self.vocabulary.W
        seen = set()
        for d in self.docs:
            if d.doc_id in seen:
                raise CorpusFormatError(f"duplicate doc_id {d.doc_id!r}")
            seen.add(d.doc_id)
            if int(d.tokens.max()) >= W:
                raise CorpusFormatError(f"document {d.doc_id!r} has token id >= W={W}")
            if self.label_kind == BINARY and d.label is not None and d.label not in (0.0, 1.0):
                raise CorpusFormatError(
                    f"binary corpus document {d.doc_id!r} has label {d.label}"
                )

    def __len__(self) -> int:
        return len(self.docs)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.vocabulary == other.vocabulary
            and self.label_kind == other.label_kind
            and self.docs == other.docs
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def D(self) -> int:
        return len(self.docs)

    @property
    def W(self) -> int:
        return self.vocabulary.W

    @property
    def doc_ids(self) -> list[str]:
        return [d.doc_id for d in self.docs]

    @cached_property
    def labels(self) -> np.ndarray:
        """Labels as floats; NaN marks an unlabeled document."""
        return np.array(
            [np.nan if d.label is None else d.label for d in self.docs], dtype=np.float64
        )

    @property
    def is_labeled(self) -> bool:
        return bool(self.D) and not np.isnan(self.labels).any()

    @cached_property
    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        """Concatenated token ids and the (D+1,) document offsets into them."""
        lengths = np.fromiter((len(d) for d in self.docs), dtype=np.int64, count=self.D)
        offsets = np.zeros(self.D + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        words = (
            np.concatenate([d.tokens for d in self.docs])
            if self.docs
            else np.zeros(0, dtype=np.int64)
        )
        return words, offsets

    def subset(self, indices: Sequence[int]) -> "Corpus":
        return Corpus(self.vocabulary, tuple(self.docs[i] for i in indices), self.label_kind)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics and drop tokens shorter than two chars."""
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if len(t) >= 2]


def infer_label_kind(labels: Iterable[float | None]) -> str:
    present = [y for y in labels if y is not None]
    if present and all(y in (0.0, 1.0) for y in present):
        return BINARY
    return CONTINUOUS


def doc_id_for(index: int) -> str:
    return f"doc{index}"


def _parse_label(text: str, lineno: int) -> float | None:
    text = text.strip()
    if text == UNKNOWN_LABEL:
        return None
    try:
        label = float(text)
    except ValueError:
        raise CorpusFormatError(f"line {lineno}: label {text!r} is not a number or '?'") from None
    if not math.isfinite(label):
        raise CorpusFormatError(f"line {lineno}: label {text!r} is not finite")
    return label


def build_corpus(
    labeled_texts: Iterable[tuple[float | None, Sequence[str]]],
    label_kind: str | None = None,
) -> Corpus:
    """Build a corpus from (label, word list) pairs, numbering words by first occurrence."""
    index: dict[str, int] = {}
    words: list[str] = []
    docs = []
    for i, (label, toks) in enumerate(labeled_texts):
        if not toks:
            raise CorpusFormatError(f"document {i} is empty after tokenization")
        ids = []
        for tok in toks:
            j = index.get(tok)
            if j is None:
                j = index[tok] = len(words)
                words.append(tok)
            ids.append(j)
        docs.append(Document(doc_id_for(i), np.array(ids, dtype=np.int64), label))
    if label_kind is None:
        label_kind = infer_label_kind(d.label for d in docs)
    return Corpus(Vocabulary(words), tuple(docs), label_kind)


def load_corpus(path: str | Path, format: str = "tsv-tokens") -> Corpus:
    """Read a corpus file.

    Each line is ``LABEL<TAB>TEXT``. For ``tsv-tokens`` TEXT is space-separated
    tokens taken verbatim; for ``raw-text`` it is free text passed through
    :func:`tokenize`. ``LABEL`` is a decimal number or ``?``.
    """
    if format not in ("tsv-tokens", "raw-text"):
        raise ValueError(f"unknown corpus format {format!r}")
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise OSError(f"cannot read corpus {path}: {exc}") from exc

    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        label_text, sep, body = line.partition("\t")
        if not sep:
            raise CorpusFormatError(f"line {lineno}: expected LABEL<TAB>TEXT")
        label = _parse_label(label_text, lineno)
        toks = body.split() if format == "tsv-tokens" else tokenize(body)
        if not toks:
            raise CorpusFormatError(
                f"line {lineno}: document {len(entries)} is empty after tokenization"
            )
        entries.append((label, toks))
    return build_corpus(entries)


def _format_label(label: float | None) -> str:
    if label is None:
        return UNKNOWN_LABEL
    if float(label).is_integer() and abs(label) < 1e15:
        return str(int(label))
    return repr(float(label))


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write ``corpus`` in tsv-tokens format."""
    words = corpus.vocabulary.words
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in corpus.docs:
            fh.write(_format_label(d.label))
            fh.write("\t")
            fh.write(" ".join(words[i] for i in d.tokens))
            fh.write("\n")


def canonicalize(corpus: Corpus) -> Corpus:
    """Reorder the vocabulary by first occurrence and drop unused words.

    This is the form :func:`load_corpus` produces, so a canonical corpus
    survives a write/load round trip unchanged.
    """
    words, _ = corpus.flat
    _, first = np.unique(words, return_index=True)
    used = words[np.sort(first)]
    remap = np.full(corpus.W, -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    vocab = Vocabulary(corpus.vocabulary.words[i] for i in used)
    docs = tuple(Document(d.doc_id, remap[d.tokens], d.label) for d in corpus.docs)
    return Corpus(vocab, docs, corpus.label_kind)


def prune_vocabulary(corpus: Corpus, min_doc_fraction: float) -> Corpus:
    """Drop words found in fewer than ``ceil(min_doc_fraction * D)`` documents.

    Surviving words keep their relative order and are renumbered densely.
    Documents left with no tokens are dropped with a warning.
    """
    if not 0.0 <= min_doc_fraction <= 1.0:
        raise ValueError(f"min_doc_fraction must lie in [0, 1], got {min_doc_fraction}")
    threshold = math.ceil(min_doc_fraction * corpus.D)
    df = np.zeros(corpus.W, dtype=np.int64)
    for d in corpus.docs:
        df[np.unique(d.tokens)] += 1
    keep = df >= threshold
    if not keep.any():
        raise CorpusFormatError(
            f"pruning at min_doc_fraction={min_doc_fraction} removes every word"
        )
    remap = np.full(corpus.W, -1, dtype=np.int64)
    remap[keep] = np.arange(int(keep.sum()))
    vocab = Vocabulary(w for w, k in zip(corpus.vocabulary.words, keep) if k)

    docs = []
    dropped = []
    for d in corpus.docs:
        ids = remap[d.tokens]
        ids = ids[ids >= 0]
        if ids.size == 0:
            dropped.append(d.doc_id)
            continue
        docs.append(Document(d.doc_id, ids, d.label))
    if not docs:
        raise CorpusFormatError("pruning left no non-empty documents")
    if dropped:
        logger.warning("pruning emptied and dropped %d documents: %s", len(dropped), dropped[:10])
    logger.info("pruned vocabulary %d -> %d words (threshold %d docs)", corpus.W, vocab.W, threshold)
    return Corpus(vocab, tuple(docs), corpus.label_kind)


def train_test_split(corpus: Corpus, n_train: int, seed: int) -> tuple[Corpus, Corpus]:
    """Random split into ``n_train`` training docs and the rest; both share the vocabulary."""
    if not 1 <= n_train < corpus.D:
        raise ValueError(f"n_train must lie in [1, {corpus.D - 1}], got {n_train}")
    perm = np.random.default_rng(seed).permutation(corpus.D)
    return (
        corpus.subset(np.sort(perm[:n_train])),
        corpus.subset(np.sort(perm[n_train:])),
    )


def partition(corpus: Corpus, M: int, seed: int) -> list[Corpus]:
    """Shuffled round-robin split into ``M`` shards whose sizes differ by at most one."""
    if M < 1:
        raise ValueError(f"number of shards must be >= 1, got {M}")
    if M > corpus.D:
        raise ValueError(f"cannot split {corpus.D} documents into {M} shards")
    if M == 1:
        return [corpus]
    perm = np.random.default_rng(seed).permutation(corpus.D)
    return [corpus.subset(np.sort(perm[m::M])) for m in range(M)]


def concatenate(shards: Sequence[Corpus]) -> Corpus:
    if not shards:
        raise ValueError("no shards to concatenate")
    vocab = shards[0].vocabulary
    if any(s.vocabulary != vocab for s in shards):
        raise ValueError("shards do not share a vocabulary")
    docs = tuple(d for s in shards for d in s.docs)
    return Corpus(vocab, docs, shards[0].label_kind)


def remap_to_vocabulary(corpus: Corpus, vocab: Vocabulary) -> tuple[Corpus, int, list[str]]:
    """Re-express ``corpus`` in ``vocab``'s ids, dropping out-of-vocabulary tokens.

    Returns the new corpus, the number of dropped tokens, and the ids of
    documents that lost every token. Those documents are kept with their
    original tokens stripped out, so callers must handle them; they are
    represented by a placeholder token 0 and listed in the third element.
    """
    if corpus.vocabulary == vocab:
        return corpus, 0, []
    lookup = np.array([vocab.index.get(w, -1) for w in corpus.vocabulary.words], dtype=np.int64)
    docs = []
    n_dropped = 0
    empty = []
    for d in corpus.docs:
        ids = lookup[d.tokens]
        kept = ids[ids >= 0]
        n_dropped += int(ids.size - kept.size)
        if kept.size == 0:
            empty.append(d.doc_id)
            kept = np.zeros(1, dtype=np.int64)
        docs.append(Document(d.doc_id, kept, d.label))
    return Corpus(vocab, tuple(docs), corpus.label_kind), n_dropped, empty
