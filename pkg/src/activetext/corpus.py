"""Corpus ingestion: tokenization, keyword-substring categories, splits.

A corpus is a sequence of news-title documents, each carrying a short
keyword slug.  Categories are defined by case-insensitive substring match
against the keyword field, which gives a cheap but auditable label oracle.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable

import numpy as np

__all__ = [
    "Document",
    "CategorySpec",
    "LabeledExample",
    "CorpusError",
    "CorpusLoadResult",
    "tokenize",
    "load_corpus",
    "load_category_specs",
    "assign_labels",
    "split",
    "write_corpus_tsv",
]


class CorpusError(Exception):
    """Unrecoverable corpus-level problem (duplicate ids, bad format)."""


@dataclass(frozen=True)
class Document:
    """One raw corpus item: a title plus its keyword slug."""

    doc_id: str
    keyword: str
    title: str


@dataclass(frozen=True)
class CategorySpec:
    """A category defined by substring containment in the keyword field."""

    name: str
    substrings: tuple[str, ...]

    def __post_init__(self):
        if not self.substrings:
            raise ValueError(f"category {self.name!r} has no substrings")

    def matches(self, keyword: str) -> bool:
        kw = keyword.lower()
        return any(s.lower() in kw for s in self.substrings)


@dataclass(frozen=True)
class LabeledExample:
    """A tokenized document with a known binary class label."""

    doc_id: str
    tokens: tuple[str, ...]
    positive: bool


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace.

    Punctuation (any character neither alphanumeric nor whitespace) is
    removed outright, not replaced by a space, so "S&L" becomes "sl".
    Token order and multiplicity are preserved; empty tokens are dropped.
    """
    lowered = text.lower()
    cleaned = "".join(c for c in lowered if c.isalnum() or c.isspace())
    return cleaned.split()


@dataclass
class CorpusLoadResult:
    """Documents plus per-line errors from a TSV load."""

    documents: list[Document]
    errors: list[tuple[int, str]] = field(default_factory=list)

    @property
    def n_skipped(self) -> int:
        return len(self.errors)


def load_corpus(source: BinaryIO | Iterable[bytes]) -> CorpusLoadResult:
    """Read corpus TSV (UTF-8, LF, `doc_id<TAB>keyword<TAB>title`).

    Malformed lines (wrong column count, empty id, blank title) are
    skipped and reported with their 1-based line numbers.  A duplicate
    doc_id is a hard error: it poisons every downstream label map.
    """
    raw = source.read() if hasattr(source, "read") else b"".join(source)
    text = raw.decode("utf-8")
    docs: list[Document] = []
    errors: list[tuple[int, str]] = []
    seen: set[str] = set()
    for line_no, line in enumerate(text.split("\n"), start=1):
        if line == "":
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            errors.append((line_no, f"expected 3 tab-separated columns, got {len(cols)}"))
            continue
        doc_id, keyword, title = cols
        if not doc_id:
            errors.append((line_no, "empty doc_id"))
            continue
        if not title.strip():
            errors.append((line_no, "empty title"))
            continue
        if doc_id in seen:
            raise CorpusError(f"line {line_no}: duplicate doc_id {doc_id!r}")
        seen.add(doc_id)
        docs.append(Document(doc_id=doc_id, keyword=keyword, title=title))
    return CorpusLoadResult(documents=docs, errors=errors)


def write_corpus_tsv(documents: Iterable[Document]) -> bytes:
    """Serialize documents back to the canonical TSV byte format."""
    lines = [f"{d.doc_id}\t{d.keyword}\t{d.title}\n" for d in documents]
    return "".join(lines).encode("utf-8")


def load_category_specs(text: str) -> list[CategorySpec]:
    """Parse category specs from a JSON-lines string.

    One record per line: ``{"name": ..., "substrings": [...]}``.
    """
    import json

    specs = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            specs.append(CategorySpec(name=rec["name"], substrings=tuple(rec["substrings"])))
        except (ValueError, KeyError, TypeError) as exc:
            raise CorpusError(f"category spec line {line_no}: {exc}") from exc
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise CorpusError("duplicate category names")
    return specs


def assign_labels(corpus: Iterable[Document], spec: CategorySpec) -> dict[str, bool]:
    """Materialize the label oracle: doc_id -> member of category.

    Eager materialization keeps later oracle lookups O(1) and makes the
    whole map auditable up front.
    """
    return {d.doc_id: spec.matches(d.keyword) for d in corpus}


def split(
    corpus: list[Document], test_fraction: float, seed: int
) -> tuple[list[Document], list[Document]]:
    """Deterministic exact partition into (train, test).

    Both halves preserve the relative document order of the input.
    """
    if not corpus:
        raise CorpusError("cannot split an empty corpus")
    if not (0.0 < test_fraction < 1.0):
        raise CorpusError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(corpus)
    n_test = int(round(test_fraction * n))
    rng = np.random.default_rng(seed)
    test_idx = set(rng.permutation(n)[:n_test].tolist())
    train = [d for i, d in enumerate(corpus) if i not in test_idx]
    test = [d for i, d in enumerate(corpus) if i in test_idx]
    return train, test


def corpus_fingerprint(documents: Iterable[Document]) -> str:
    """Stable content hash of a corpus, for run manifests."""
    h = hashlib.sha256()
    for d in documents:
        h.update(f"{d.doc_id}\t{d.keyword}\t{d.title}\n".encode("utf-8"))
    return h.hexdigest()
