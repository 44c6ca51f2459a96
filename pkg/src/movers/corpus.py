"""Corpus ingestion: vocabularies, embeddings, histograms, and index files.

This module turns raw inputs (word2vec embedding files, line- or JSONL-based
document corpora, stop-word lists) into the immutable structures every
distance algorithm consumes:

* ``Vocabulary``        token -> dense word-id mapping
* embedding matrix      dense (v, m) float32 array, one row per word
* ``Histogram``         one document as sorted word-ids + L1-normalized weights
* ``HistogramSet``      a document collection in compressed-sparse-row layout

Tokenization is deliberately minimal and documented so corpora are
reproducible: lowercase, split on whitespace, strip surrounding punctuation.
Out-of-vocabulary tokens and stop-words are dropped before normalization,
so weights are term frequencies over embeddable words only.

The on-disk index format (``write_index_file`` / ``read_index_file``) is
little-endian throughout:

    magic "LCRW" | version u32 | v_e u64 | n u64 | m u64
    row-offsets  u64 x (n+1)
    column-ids   u32 x nnz
    values       f32 x nnz
    embeddings   f32 x (v_e * m), row-major
    words        v_e strings, each u32 byte-length + UTF-8 bytes
"""

from __future__ import annotations

import json
import string
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

INDEX_MAGIC = b"LCRW"
INDEX_FORMAT_VERSION = 1

WEIGHT_SUM_TOL = 1e-6


class CorpusError(ValueError):
    """Malformed corpus, embedding, or index input."""


class EmbeddingLoadError(CorpusError):
    """Embedding file cannot be parsed; message names the line or byte offset."""


class IngestError(CorpusError):
    """A document cannot be turned into a histogram (empty after filtering)."""

    def __init__(self, message: str, doc_index: int):
        super().__init__(message)
        self.doc_index = doc_index


@dataclass
class Vocabulary:
    """Ordered unique tokens with a dense, stable token -> id map."""

    words: list[str]
    index: dict[str, int]

    @classmethod
    def from_words(cls, words: Iterable[str]) -> "Vocabulary":
        """Build from an iterable of tokens, keeping first occurrences."""
        ordered: list[str] = []
        index: dict[str, int] = {}
        for w in words:
            if w not in index:
                index[w] = len(ordered)
                ordered.append(w)
        return cls(words=ordered, index=index)

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def lookup(self, token: str) -> int:
        return self.index[token]


@dataclass
class Histogram:
    """One document: sorted unique word-ids with positive L1-normalized weights."""

    word_ids: np.ndarray  # int32, strictly increasing
    weights: np.ndarray   # float32, > 0, sums to 1 within WEIGHT_SUM_TOL

    def __len__(self) -> int:
        return len(self.word_ids)


@dataclass
class HistogramSet:
    """Document collection as a CSR matrix with ``n_cols`` logical columns."""

    row_offsets: np.ndarray  # int64, length n+1, monotone nondecreasing
    column_ids: np.ndarray   # int32, length nnz, ascending within each row
    values: np.ndarray       # float32, length nnz, positive
    n_cols: int

    @property
    def n_rows(self) -> int:
        return len(self.row_offsets) - 1

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    @property
    def row_sizes(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def row(self, i: int) -> Histogram:
        lo, hi = int(self.row_offsets[i]), int(self.row_offsets[i + 1])
        return Histogram(self.column_ids[lo:hi], self.values[lo:hi])

    def slice_rows(self, start: int, stop: int) -> "HistogramSet":
        """Contiguous row range as a new set (arrays are views where possible)."""
        lo, hi = int(self.row_offsets[start]), int(self.row_offsets[stop])
        return HistogramSet(
            row_offsets=self.row_offsets[start:stop + 1] - lo,
            column_ids=self.column_ids[lo:hi],
            values=self.values[lo:hi],
            n_cols=self.n_cols,
        )

    def take_rows(self, indices: np.ndarray) -> "HistogramSet":
        """Arbitrary row subset in the given order."""
        rows = [self.row(int(i)) for i in indices]
        return HistogramSet.from_rows([(r.word_ids, r.weights) for r in rows], self.n_cols)

    @classmethod
    def from_rows(
        cls, rows: Sequence[tuple[np.ndarray, np.ndarray]], n_cols: int
    ) -> "HistogramSet":
        offsets = np.zeros(len(rows) + 1, dtype=np.int64)
        for i, (ids, _) in enumerate(rows):
            offsets[i + 1] = offsets[i] + len(ids)
        if len(rows):
            ids = np.concatenate([np.asarray(r[0], dtype=np.int32) for r in rows])
            vals = np.concatenate([np.asarray(r[1], dtype=np.float32) for r in rows])
        else:
            ids = np.zeros(0, dtype=np.int32)
            vals = np.zeros(0, dtype=np.float32)
        return cls(offsets, ids, vals, n_cols)

    def validate(self) -> None:
        """Check the CSR and per-row histogram invariants; raise CorpusError."""
        if len(self.row_offsets) < 1 or self.row_offsets[0] != 0:
            raise CorpusError("row offsets must start at 0")
        if np.any(np.diff(self.row_offsets) <= 0):
            raise CorpusError("every row must hold at least one word")
        if self.nnz != len(self.column_ids) or self.nnz != len(self.values):
            raise CorpusError("offset/array length mismatch")
        if np.any(self.values <= 0):
            raise CorpusError("weights must be positive")
        if len(self.column_ids) and (
            self.column_ids.min() < 0 or self.column_ids.max() >= self.n_cols
        ):
            raise CorpusError("column id out of range")
        for i in range(self.n_rows):
            lo, hi = int(self.row_offsets[i]), int(self.row_offsets[i + 1])
            ids = self.column_ids[lo:hi]
            if np.any(np.diff(ids) <= 0):
                raise CorpusError(f"row {i}: word ids not strictly increasing")
            s = float(np.sum(self.values[lo:hi], dtype=np.float64))
            if abs(s - 1.0) > WEIGHT_SUM_TOL:
                raise CorpusError(f"row {i}: weights sum to {s}, expected 1.0")


# ---------------------------------------------------------------------------
# Tokenization and corpus/stop-word/label readers
# ---------------------------------------------------------------------------

_STRIP_CHARS = string.punctuation + "“”‘’«»"


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip surrounding punctuation."""
    out = []
    for raw in text.lower().split():
        tok = raw.strip(_STRIP_CHARS)
        if tok:
            out.append(tok)
    return out


def read_corpus(path: str | Path) -> tuple[list[str], list[list[str]]]:
    """Read a corpus file: one document per line, plain text or JSONL.

    JSONL records must carry ``{"id": ..., "text": ...}``; plain-text lines
    get their 0-based line number as the document id. Blank lines are
    skipped. Returns (doc_ids, token_lists).
    """
    path = Path(path)
    doc_ids: list[str] = []
    docs: list[list[str]] = []
    with path.open("r", encoding="utf-8") as fh:
        jsonl = None
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            if jsonl is None:
                jsonl = line.startswith("{")
            if jsonl:
                try:
                    rec = json.loads(line)
                    text = rec["text"]
                    doc_id = str(rec.get("id", lineno))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise CorpusError(f"{path}:{lineno + 1}: bad JSONL record: {exc}")
            else:
                text, doc_id = line, str(lineno)
            doc_ids.append(doc_id)
            docs.append(tokenize(text))
    return doc_ids, docs


def read_stopwords(path: str | Path) -> frozenset[str]:
    """One stop-word per line; blank lines ignored."""
    with Path(path).open("r", encoding="utf-8") as fh:
        return frozenset(w.strip().lower() for w in fh if w.strip())


def read_labels(path: str | Path) -> list[str]:
    """One label per line, aligned with corpus document order."""
    with Path(path).open("r", encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# Embedding loaders (word2vec text and binary formats)
# ---------------------------------------------------------------------------

def load_embeddings(
    path: str | Path, fmt: str = "text"
) -> tuple[Vocabulary, np.ndarray]:
    """Load a word2vec-format embedding file.

    Text format: first line ``"v m"``, then one line per word with the token
    followed by m decimal floats. Binary format: ASCII header ``"v m\\n"``,
    then per word the token bytes terminated by a space followed by m
    little-endian float32 values, optionally followed by a newline.

    Duplicate words keep the first occurrence (the later vector is read and
    discarded), so the returned vocabulary may be smaller than the header
    count. Raises EmbeddingLoadError naming the offending line (text) or
    byte offset (binary) for malformed headers, short vectors, or
    non-finite values.
    """
    if fmt == "text":
        return _load_text_embeddings(Path(path))
    if fmt == "binary":
        return _load_binary_embeddings(Path(path))
    raise ValueError(f"unknown embedding format: {fmt!r}")


def _parse_header(first: str, where: str) -> tuple[int, int]:
    parts = first.split()
    if len(parts) != 2:
        raise EmbeddingLoadError(f"{where}: malformed header {first!r}, expected 'v m'")
    try:
        v, m = int(parts[0]), int(parts[1])
    except ValueError:
        raise EmbeddingLoadError(f"{where}: non-integer header fields in {first!r}")
    if v < 1 or m < 1:
        raise EmbeddingLoadError(f"{where}: header counts must be positive, got v={v} m={m}")
    return v, m


def _load_text_embeddings(path: Path) -> tuple[Vocabulary, np.ndarray]:
    with path.open("r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first:
            raise EmbeddingLoadError(f"{path}:1: empty file")
        v, m = _parse_header(first.strip(), f"{path}:1")
        words: list[str] = []
        index: dict[str, int] = {}
        rows: list[np.ndarray] = []
        seen = 0
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            if seen >= v:
                raise EmbeddingLoadError(f"{path}:{lineno}: more rows than header v={v}")
            parts = line.rstrip("\n").split(" ")
            token = parts[0]
            vec_fields = [p for p in parts[1:] if p]
            if len(vec_fields) != m:
                raise EmbeddingLoadError(
                    f"{path}:{lineno}: expected {m} values, found {len(vec_fields)}"
                )
            try:
                vec = np.array(vec_fields, dtype=np.float32)
            except ValueError:
                raise EmbeddingLoadError(f"{path}:{lineno}: non-numeric value")
            if not np.all(np.isfinite(vec)):
                raise EmbeddingLoadError(f"{path}:{lineno}: non-finite value")
            seen += 1
            if token in index:
                continue  # first occurrence wins
            index[token] = len(words)
            words.append(token)
            rows.append(vec)
        if seen != v:
            raise EmbeddingLoadError(f"{path}: header promised {v} rows, found {seen}")
    matrix = np.vstack(rows).astype(np.float32) if rows else np.zeros((0, m), np.float32)
    return Vocabulary(words=words, index=index), matrix


def _load_binary_embeddings(path: Path) -> tuple[Vocabulary, np.ndarray]:
    data = path.read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise EmbeddingLoadError(f"{path}: offset 0: missing header newline")
    try:
        header = data[:nl].decode("ascii")
    except UnicodeDecodeError:
        raise EmbeddingLoadError(f"{path}: offset 0: non-ASCII header")
    v, m = _parse_header(header, f"{path}: offset 0")
    pos = nl + 1
    vec_bytes = 4 * m
    words: list[str] = []
    index: dict[str, int] = {}
    rows: list[np.ndarray] = []
    for i in range(v):
        while pos < len(data) and data[pos:pos + 1] == b"\n":
            pos += 1
        sp = data.find(b" ", pos)
        if sp < 0:
            raise EmbeddingLoadError(f"{path}: offset {pos}: unterminated token for word {i}")
        try:
            token = data[pos:sp].decode("utf-8")
        except UnicodeDecodeError:
            raise EmbeddingLoadError(f"{path}: offset {pos}: token is not valid UTF-8")
        vec_start = sp + 1
        if vec_start + vec_bytes > len(data):
            raise EmbeddingLoadError(
                f"{path}: offset {vec_start}: truncated vector for word {i} ({token!r})"
            )
        vec = np.frombuffer(data, dtype="<f4", count=m, offset=vec_start).copy()
        if not np.all(np.isfinite(vec)):
            raise EmbeddingLoadError(
                f"{path}: offset {vec_start}: non-finite value in vector for {token!r}"
            )
        pos = vec_start + vec_bytes
        if token not in index:
            index[token] = len(words)
            words.append(token)
            rows.append(vec)
    matrix = np.vstack(rows).astype(np.float32) if rows else np.zeros((0, m), np.float32)
    return Vocabulary(words=words, index=index), matrix


# ---------------------------------------------------------------------------
# Histogram construction and vocabulary restriction
# ---------------------------------------------------------------------------

def build_histograms(
    docs: Sequence[Sequence[str]],
    vocab: Vocabulary,
    stopwords: frozenset[str] | set[str] = frozenset(),
    on_empty: str = "raise",
) -> tuple[HistogramSet, np.ndarray]:
    """Turn token lists into an L1-normalized CSR histogram set.

    Per document: drop stop-words and out-of-vocabulary tokens, count term
    frequencies, normalize to sum 1. A document that becomes empty raises
    IngestError carrying its index, or is skipped when ``on_empty="skip"``.
    Returns (histogram set, indices of the documents that were kept).
    """
    if len(vocab) == 0:
        raise CorpusError("vocabulary is empty")
    if on_empty not in ("raise", "skip"):
        raise ValueError(f"on_empty must be 'raise' or 'skip', got {on_empty!r}")
    lookup = vocab.index
    rows: list[tuple[np.ndarray, np.ndarray]] = []
    kept: list[int] = []
    for doc_idx, tokens in enumerate(docs):
        ids = [lookup[t] for t in tokens if t not in stopwords and t in lookup]
        if not ids:
            if on_empty == "raise":
                raise IngestError(
                    f"document {doc_idx} is empty after stop-word and "
                    "out-of-vocabulary filtering",
                    doc_index=doc_idx,
                )
            continue
        uniq, counts = np.unique(np.asarray(ids, dtype=np.int32), return_counts=True)
        weights = (counts / counts.sum()).astype(np.float32)
        rows.append((uniq, weights))
        kept.append(doc_idx)
    return HistogramSet.from_rows(rows, n_cols=len(vocab)), np.asarray(kept, dtype=np.int64)


def restrict_vocabulary(
    hist_set: HistogramSet, embeddings: np.ndarray
) -> tuple[HistogramSet, np.ndarray, np.ndarray]:
    """Drop vocabulary words that never occur in ``hist_set``.

    Returns (compacted set, compacted embedding rows, remap) where
    ``remap[old_id]`` is the new id or -1 for eliminated words. New ids are
    assigned in ascending old-id order, so per-row id order is preserved and
    distances computed on the restricted index equal those on the full one.
    """
    if hist_set.n_rows == 0:
        raise CorpusError("cannot restrict an empty histogram set")
    used = np.unique(hist_set.column_ids)
    remap = np.full(hist_set.n_cols, -1, dtype=np.int32)
    remap[used] = np.arange(len(used), dtype=np.int32)
    restricted = HistogramSet(
        row_offsets=hist_set.row_offsets.copy(),
        column_ids=remap[hist_set.column_ids],
        values=hist_set.values.copy(),
        n_cols=len(used),
    )
    return restricted, np.ascontiguousarray(embeddings[used]), remap


# ---------------------------------------------------------------------------
# Index persistence
# ---------------------------------------------------------------------------

def write_index_file(
    path: str | Path,
    hist_set: HistogramSet,
    embeddings: np.ndarray,
    words: Sequence[str],
) -> None:
    """Serialize a restricted histogram set + embeddings + vocabulary."""
    v_e, m = embeddings.shape
    if hist_set.n_cols != v_e or len(words) != v_e:
        raise CorpusError(
            f"inconsistent index: {hist_set.n_cols} columns, "
            f"{v_e} embedding rows, {len(words)} words"
        )
    with Path(path).open("wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<I", INDEX_FORMAT_VERSION))
        fh.write(struct.pack("<QQQ", v_e, hist_set.n_rows, m))
        fh.write(np.ascontiguousarray(hist_set.row_offsets, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(hist_set.column_ids, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(hist_set.values, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(embeddings, dtype="<f4").tobytes())
        for w in words:
            raw = w.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)


def read_index_file(path: str | Path) -> tuple[HistogramSet, np.ndarray, list[str]]:
    """Read a file written by ``write_index_file``; inverse round-trips bitwise."""
    data = Path(path).read_bytes()
    if data[:4] != INDEX_MAGIC:
        raise CorpusError(f"{path}: bad magic bytes, not an index file")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != INDEX_FORMAT_VERSION:
        raise CorpusError(f"{path}: unsupported format version {version}")
    v_e, n, m = struct.unpack_from("<QQQ", data, 8)
    pos = 8 + 24

    def take(dtype: str, count: int) -> np.ndarray:
        nonlocal pos
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
        pos += arr.nbytes
        return arr

    offsets = take("<u8", n + 1).astype(np.int64)
    nnz = int(offsets[-1])
    ids = take("<u4", nnz).astype(np.int32)
    values = take("<f4", nnz).copy()
    emb = take("<f4", v_e * m).reshape(v_e, m).copy()
    words: list[str] = []
    for _ in range(v_e):
        (length,) = struct.unpack_from("<I", data, pos)
        pos += 4
        words.append(data[pos:pos + length].decode("utf-8"))
        pos += length
    hist_set = HistogramSet(offsets, ids, values, n_cols=int(v_e))
    return hist_set, emb, words
