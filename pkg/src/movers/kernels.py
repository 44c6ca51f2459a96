"""Compute primitives: blocked pairwise Euclidean distances, row/column and
segmented minima, CSR-times-dense products, centroids, and top-k selection.

Every kernel is a pure function over immutable inputs. Reductions accumulate
in float64 and results are stored in float32. Per-entry results are
independent of how the work is tiled: each pairwise distance is derived from
per-row squared norms plus a float64 dot product reduced over the embedding
axis only, and each sparse-product row is reduced over its own nonzeros in
ascending word-id order. This is what makes blocked evaluation, vocabulary
restriction, query batching, and row partitioning all bitwise-neutral.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import HistogramSet

DEFAULT_ROW_BLOCK = 256
DEFAULT_COL_BLOCK = 256

# Cap on the (rows x cols x m) float64 product scratch. Column tiles are
# narrowed to fit; the embedding axis is never split, so entries do not
# change.
_SCRATCH_BUDGET_BYTES = 1 << 24


@dataclass
class DistanceBlock:
    """Dense block of pairwise distances with its global index ranges."""

    values: np.ndarray  # float32 (r, c), nonnegative and finite
    row_start: int = 0
    col_start: int = 0

    @property
    def row_ids(self) -> range:
        return range(self.row_start, self.row_start + self.values.shape[0])

    @property
    def col_ids(self) -> range:
        return range(self.col_start, self.col_start + self.values.shape[1])


@dataclass
class TopKResult:
    """Per-query nearest documents, ascending by (distance, document-id)."""

    distances: np.ndarray
    ids: np.ndarray  # int64, unique

    def __len__(self) -> int:
        return len(self.ids)


def _block_values(block) -> np.ndarray:
    return block.values if isinstance(block, DistanceBlock) else np.asarray(block)


# ---------------------------------------------------------------------------
# Pairwise Euclidean distances (Gram expansion)
# ---------------------------------------------------------------------------

def squared_norms(a: np.ndarray) -> np.ndarray:
    """Float64 squared row norms, reduced the same way as the pair dots."""
    a64 = np.ascontiguousarray(a, dtype=np.float64)
    return np.sum(a64 * a64, axis=1)


def euclidean_into(
    a64: np.ndarray,
    sq_a: np.ndarray,
    b64: np.ndarray,
    sq_b: np.ndarray,
    out: np.ndarray,
    row_block: int = DEFAULT_ROW_BLOCK,
    col_block: int = DEFAULT_COL_BLOCK,
) -> np.ndarray:
    """Fill ``out`` (float32, r x c) with pairwise Euclidean distances.

    Parameters
    ----------
    a64, b64 : float64 C-contiguous matrices, shapes (r, m) and (c, m)
    sq_a, sq_b : squared row norms from ``squared_norms``
    out : preallocated float32 (r, c) target
    row_block, col_block : tile sizes; results are tile-invariant

    Each entry is sqrt(max(0, |a|^2 + |b|^2 - 2 a.b)). The clamp guards the
    Gram expansion against negative round-off; identical rows come out as
    exactly zero because the norm and dot reductions coincide bitwise.
    """
    r, m = a64.shape
    c = b64.shape[0]
    if b64.shape[1] != m:
        raise ValueError(f"dimension mismatch: {m} vs {b64.shape[1]}")
    max_cols = max(1, _SCRATCH_BUDGET_BYTES // (row_block * max(m, 1) * 8))
    col_step = min(col_block, max_cols)
    for r0 in range(0, r, row_block):
        r1 = min(r0 + row_block, r)
        a_blk = a64[r0:r1]
        for c0 in range(0, c, col_step):
            c1 = min(c0 + col_step, c)
            dots = np.sum(a_blk[:, None, :] * b64[None, c0:c1, :], axis=2)
            sq = sq_a[r0:r1, None] + sq_b[None, c0:c1] - 2.0 * dots
            np.maximum(sq, 0.0, out=sq)
            np.sqrt(sq, out=sq)
            out[r0:r1, c0:c1] = sq
    return out


def pairwise_euclidean(
    a: np.ndarray,
    b: np.ndarray,
    row_block: int = DEFAULT_ROW_BLOCK,
    col_block: int = DEFAULT_COL_BLOCK,
    row_start: int = 0,
    col_start: int = 0,
) -> DistanceBlock:
    """All-pairs Euclidean distances between the rows of ``a`` and ``b``."""
    a = np.atleast_2d(np.asarray(a))
    b = np.atleast_2d(np.asarray(b))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    a64 = np.ascontiguousarray(a, dtype=np.float64)
    b64 = np.ascontiguousarray(b, dtype=np.float64)
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.float32)
    euclidean_into(a64, squared_norms(a), b64, squared_norms(b), out, row_block, col_block)
    return DistanceBlock(out, row_start=row_start, col_start=col_start)


# ---------------------------------------------------------------------------
# Minima
# ---------------------------------------------------------------------------

def row_min(block) -> np.ndarray:
    """Exact minimum of each row."""
    values = _block_values(block)
    if values.size == 0:
        raise ValueError("row_min of an empty block")
    return values.min(axis=1)


def col_min(block) -> np.ndarray:
    """Exact minimum of each column."""
    values = _block_values(block)
    if values.size == 0:
        raise ValueError("col_min of an empty block")
    return values.min(axis=0)


def segmented_min(values: np.ndarray, seg_offsets: np.ndarray, axis: int = 0) -> np.ndarray:
    """Per-segment minima along ``axis`` for contiguous segments.

    ``seg_offsets`` has length n_segments+1 in the style of CSR row offsets.
    Minimum is exact, so the result does not depend on how segments were
    assembled from partial blocks.
    """
    seg_offsets = np.asarray(seg_offsets, dtype=np.int64)
    if len(seg_offsets) < 2:
        raise ValueError("need at least one segment")
    if np.any(np.diff(seg_offsets) <= 0):
        raise ValueError("empty segment")
    if seg_offsets[-1] != values.shape[axis]:
        raise ValueError("segment offsets do not cover the reduced axis")
    return np.minimum.reduceat(values, seg_offsets[:-1], axis=axis)


# ---------------------------------------------------------------------------
# Sparse-times-dense products and centroids
# ---------------------------------------------------------------------------

def spmm(x: HistogramSet, z: np.ndarray) -> np.ndarray:
    """CSR-times-dense product: out[i] = sum_p x[i][p] * z[p].

    ``z`` has shape (v, b); the result is float32 (n, b). Products are formed
    and reduced in float64, per row over its nonzeros in ascending word-id
    order, then rounded once to float32.
    """
    z = np.asarray(z)
    if z.ndim != 2:
        raise ValueError("spmm expects a 2-d right-hand side")
    if z.shape[0] != x.n_cols:
        raise ValueError(f"dimension mismatch: {x.n_cols} columns vs {z.shape[0]} rows")
    if x.n_rows == 0:
        return np.zeros((0, z.shape[1]), dtype=np.float32)
    prod = x.values.astype(np.float64)[:, None] * z.astype(np.float64)[x.column_ids, :]
    acc = np.add.reduceat(prod, x.row_offsets[:-1], axis=0)
    return acc.astype(np.float32)


def spmv(x: HistogramSet, z: np.ndarray) -> np.ndarray:
    """CSR-times-vector; identical to the matching ``spmm`` column bitwise."""
    z = np.asarray(z)
    if z.ndim != 1:
        raise ValueError("spmv expects a 1-d right-hand side")
    return spmm(x, z[:, None])[:, 0]


def centroids(x: HistogramSet, embeddings: np.ndarray) -> np.ndarray:
    """Weighted average of each row's embedding vectors, float32 (n, m)."""
    return spmm(x, embeddings)


# ---------------------------------------------------------------------------
# Top-k selection and merging
# ---------------------------------------------------------------------------

def topk_select(distances: np.ndarray, ids: np.ndarray, k: int) -> TopKResult:
    """The k smallest candidates under ascending (distance, id) order.

    Deterministic for any input permutation; ties on distance resolve to the
    smaller document id. Fewer than k candidates are all returned.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    distances = np.asarray(distances)
    ids = np.asarray(ids, dtype=np.int64)
    if distances.shape != ids.shape:
        raise ValueError("distances and ids must align")
    order = np.lexsort((ids, distances))[: min(k, len(ids))]
    return TopKResult(distances=distances[order].copy(), ids=ids[order].copy())


def topk_merge(parts: list[TopKResult], k: int) -> TopKResult:
    """Merge per-shard results; equals ``topk_select`` on the concatenation."""
    if not parts:
        return TopKResult(np.zeros(0, dtype=np.float32), np.zeros(0, dtype=np.int64))
    distances = np.concatenate([p.distances for p in parts])
    ids = np.concatenate([p.ids for p in parts])
    return topk_select(distances, ids, k)
