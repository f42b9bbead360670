"""Incremental inverted index with BM25 ranked search.

Documents are tokenized with textprep.tokenize; postings map term ->
{doc ordinal: term frequency}. Re-indexing a doc_id replaces the previous
version in place (same ordinal), making indexing idempotent by doc_id.
A rewrite without a label keeps any label already present, so a raw
envelope arriving after the scored version never strips the enrichment.

Scoring: BM25 with k1=1.2, b=0.75 and
    IDF(t) = ln(1 + (N - df + 0.5) / (df + 0.5))
Results are sorted by score descending, ties broken by doc ordinal ascending.

The index lives in memory; snapshot()/load_snapshot() persist it as
snapshot-<n>.bin files (magic "MIDX", u32 version, then a UTF-8 JSON body).
Rebuilding from the archive is the alternative recovery path.
"""

from __future__ import annotations

import json
import math
import struct
import threading
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from .textprep import tokenize
from .types import LabeledRecord, RecordEnvelope

BM25_K1 = 1.2
BM25_B = 0.75

_SNAPSHOT_MAGIC = b"MIDX"
_SNAPSHOT_VERSION = 1
_SNIPPET_CHARS = 160


class SnapshotError(Exception):
    pass


@dataclass(frozen=True)
class SearchHit:
    doc_id: str
    score: float
    snippet: str
    label: Optional[str] = None


@dataclass
class _DocEntry:
    doc_id: str
    length: int
    snippet: str
    label: Optional[str]


class InvertedIndex:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._postings: dict[str, dict[int, int]] = {}
        self._docs: list[_DocEntry] = []  # ordinal -> entry
        self._ordinals: dict[str, int] = {}  # doc_id -> ordinal
        self._doc_terms: dict[int, Counter] = {}  # for replace semantics
        self.total_tokens = 0

    # -- stats -----------------------------------------------------------

    @property
    def doc_count(self) -> int:
        return len(self._docs)

    @property
    def avg_doc_len(self) -> float:
        return self.total_tokens / self.doc_count if self.doc_count else 0.0

    def doc_len(self, doc_id: str) -> Optional[int]:
        ordinal = self._ordinals.get(doc_id)
        return self._docs[ordinal].length if ordinal is not None else None

    def label_of(self, doc_id: str) -> Optional[str]:
        ordinal = self._ordinals.get(doc_id)
        return self._docs[ordinal].label if ordinal is not None else None

    def postings(self, term: str) -> list[tuple[int, int]]:
        """(doc ordinal, term frequency) entries, sorted by ordinal."""
        with self._lock:
            return sorted(self._postings.get(term, {}).items())

    def labeled_doc_count(self) -> int:
        with self._lock:
            return sum(1 for d in self._docs if d.label is not None)

    def label_counts(self) -> Counter:
        with self._lock:
            return Counter(d.label for d in self._docs if d.label is not None)

    # -- mutation ----------------------------------------------------------

    def index_document(self, record: Union[RecordEnvelope, LabeledRecord]) -> None:
        """Add or replace the record under its doc_id."""
        if isinstance(record, LabeledRecord):
            doc_id, text, label = record.doc_id, record.text, record.predicted_label
        else:
            doc_id, text, label = record.doc_id, record.text, record.label
        terms = Counter(tokenize(text))
        length = sum(terms.values())
        with self._lock:
            ordinal = self._ordinals.get(doc_id)
            if ordinal is None:
                ordinal = len(self._docs)
                self._ordinals[doc_id] = ordinal
                self._docs.append(_DocEntry(doc_id, 0, "", None))
            else:
                for term in self._doc_terms[ordinal]:
                    bucket = self._postings[term]
                    del bucket[ordinal]
                    if not bucket:
                        del self._postings[term]
                self.total_tokens -= self._docs[ordinal].length
                if label is None:
                    # ingest and scoring run concurrently, so the scored
                    # version of a doc can land first; the raw envelope
                    # arriving later must not erase its label
                    label = self._docs[ordinal].label
            for term, tf in terms.items():
                self._postings.setdefault(term, {})[ordinal] = tf
            self._doc_terms[ordinal] = terms
            self._docs[ordinal] = _DocEntry(
                doc_id=doc_id,
                length=length,
                snippet=text[:_SNIPPET_CHARS],
                label=label,
            )
            self.total_tokens += length

    # -- search ------------------------------------------------------------

    def search(self, query: str, k: int = 10, label: Optional[str] = None) -> list[SearchHit]:
        """Top-k BM25 hits; an optional label filter restricts candidates."""
        if k < 1:
            raise ValueError("k must be >= 1")
        terms = tokenize(query)
        with self._lock:
            n_docs = len(self._docs)
            if n_docs == 0 or not terms:
                return []
            avg_len = self.total_tokens / n_docs
            scores: dict[int, float] = {}
            for term in set(terms):
                bucket = self._postings.get(term)
                if not bucket:
                    continue
                df = len(bucket)
                idf = math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))
                for ordinal, tf in bucket.items():
                    doc = self._docs[ordinal]
                    if label is not None and doc.label != label:
                        continue
                    norm = BM25_K1 * (1.0 - BM25_B + BM25_B * doc.length / avg_len)
                    scores[ordinal] = scores.get(ordinal, 0.0) + idf * (
                        tf * (BM25_K1 + 1.0)
                    ) / (tf + norm)
            ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))[:k]
            return [
                SearchHit(
                    doc_id=self._docs[o].doc_id,
                    score=s,
                    snippet=self._docs[o].snippet,
                    label=self._docs[o].label,
                )
                for o, s in ranked
            ]

    # -- persistence ---------------------------------------------------------

    def snapshot(self, data_dir: str | Path) -> Path:
        """Write snapshot-<n>.bin with n = latest + 1; returns the path."""
        index_dir = Path(data_dir) / "index"
        index_dir.mkdir(parents=True, exist_ok=True)
        existing = [
            int(p.stem.split("-")[1]) for p in index_dir.glob("snapshot-*.bin")
        ]
        n = max(existing) + 1 if existing else 0
        path = index_dir / f"snapshot-{n}.bin"
        with self._lock:
            body = {
                "docs": [
                    [d.doc_id, d.length, d.snippet, d.label] for d in self._docs
                ],
                "doc_terms": {
                    str(ordinal): dict(terms)
                    for ordinal, terms in self._doc_terms.items()
                },
                "total_tokens": self.total_tokens,
            }
        blob = json.dumps(body, ensure_ascii=False).encode("utf-8")
        tmp = path.with_suffix(".tmp")
        with tmp.open("wb") as fh:
            fh.write(_SNAPSHOT_MAGIC)
            fh.write(struct.pack("<I", _SNAPSHOT_VERSION))
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
        tmp.replace(path)
        return path

    @classmethod
    def load_snapshot(cls, path: str | Path) -> "InvertedIndex":
        path = Path(path)
        with path.open("rb") as fh:
            magic = fh.read(4)
            if magic != _SNAPSHOT_MAGIC:
                raise SnapshotError(f"bad snapshot magic in {path}")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != _SNAPSHOT_VERSION:
                raise SnapshotError(f"unsupported snapshot version {version}")
            (length,) = struct.unpack("<Q", fh.read(8))
            blob = fh.read(length)
            if len(blob) < length:
                raise SnapshotError(f"truncated snapshot {path}")
        body = json.loads(blob)
        idx = cls()
        for ordinal, (doc_id, doc_len, snippet, label) in enumerate(body["docs"]):
            idx._docs.append(_DocEntry(doc_id, doc_len, snippet, label))
            idx._ordinals[doc_id] = ordinal
        for ordinal_str, terms in body["doc_terms"].items():
            ordinal = int(ordinal_str)
            counter = Counter(terms)
            idx._doc_terms[ordinal] = counter
            for term, tf in counter.items():
                idx._postings.setdefault(term, {})[ordinal] = tf
        idx.total_tokens = body["total_tokens"]
        return idx

    @classmethod
    def latest_snapshot(cls, data_dir: str | Path) -> Optional[Path]:
        index_dir = Path(data_dir) / "index"
        if not index_dir.is_dir():
            return None
        best: Optional[tuple[int, Path]] = None
        for p in index_dir.glob("snapshot-*.bin"):
            n = int(p.stem.split("-")[1])
            if best is None or n > best[0]:
                best = (n, p)
        return best[1] if best else None
