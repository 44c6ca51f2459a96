"""Document-distance relaxations over the kernel layer.

Three relaxations of the exact mover's distance are provided, all lower
bounds of it:

* ``wcd_block``       Euclidean distance between embedding-weighted centroids.
* ``rwmd_quadratic``  per-pair relaxation: every word's mass moves wholly to
                      its nearest counterpart; the symmetric bound is the max
                      of the two one-sided bounds. Cost grows with the product
                      of histogram sizes.
* ``lcrwmd_*``        two-phase reformulation of the same bound. Phase 1
                      computes, for one query histogram, the distance from
                      every vocabulary word to its closest query word (a dense
                      vector ``z``). Phase 2 is a sparse-times-dense product
                      of the resident set with ``z``. Averaged over a large
                      resident set this is linear in histogram size.

The quadratic and two-phase forms compute the same quantity; tests hold them
to 1e-5 relative agreement. Vocabulary restriction (dropping words absent
from the resident side) is recomputed per direction inside ``lcrwmd_full``
and never changes results, because each pairwise entry depends only on the
two word vectors involved.

A query word that is missing from the restricted vocabulary still
participates through its own embedding row on the query side; do not
"optimize" it away, that would break the equivalence with the quadratic
form.
"""

from __future__ import annotations

import numpy as np

from .corpus import Histogram, HistogramSet, restrict_vocabulary
from .kernels import (
    DEFAULT_COL_BLOCK,
    DEFAULT_ROW_BLOCK,
    DistanceBlock,
    centroids,
    euclidean_into,
    pairwise_euclidean,
    spmm,
    squared_norms,
)


def _check_space(x: HistogramSet, embeddings: np.ndarray, name: str) -> None:
    if x.n_cols != embeddings.shape[0]:
        raise ValueError(
            f"{name}: histogram columns ({x.n_cols}) do not match "
            f"embedding rows ({embeddings.shape[0]})"
        )


# ---------------------------------------------------------------------------
# Word centroid distance
# ---------------------------------------------------------------------------

def wcd_block(
    x1: HistogramSet,
    x2: HistogramSet,
    embeddings: np.ndarray,
    row_block: int = DEFAULT_ROW_BLOCK,
    col_block: int = DEFAULT_COL_BLOCK,
) -> DistanceBlock:
    """Centroid distances for all pairs: a cheap, loose lower bound."""
    _check_space(x1, embeddings, "x1")
    _check_space(x2, embeddings, "x2")
    c1 = centroids(x1, embeddings)
    c2 = centroids(x2, embeddings)
    return pairwise_euclidean(c1, c2, row_block=row_block, col_block=col_block)


# ---------------------------------------------------------------------------
# Quadratic relaxation
# ---------------------------------------------------------------------------

def rwmd_bounds(
    x1: HistogramSet,
    x2: HistogramSet,
    embeddings: np.ndarray,
    row_block: int = DEFAULT_ROW_BLOCK,
    col_block: int = DEFAULT_COL_BLOCK,
) -> tuple[np.ndarray, np.ndarray]:
    """Both one-sided relaxation bounds for all pairs, as (n1, n2) arrays.

    ``bound1[i, j]`` sends x1[i]'s mass to the nearest words of x2[j] (dot of
    x1[i]'s weights with the row minima of the pairwise word-distance matrix);
    ``bound2[i, j]`` is the swapped direction via column minima. The word
    vectors of all x1 rows are stacked into one tall matrix once and each
    query is processed in a single pass against it.
    """
    _check_space(x1, embeddings, "x1")
    _check_space(x2, embeddings, "x2")
    t1 = np.ascontiguousarray(embeddings[x1.column_ids], dtype=np.float64)
    sq_t1 = squared_norms(t1)
    w1 = x1.values.astype(np.float64)
    starts = x1.row_offsets[:-1]
    n1, n2 = x1.n_rows, x2.n_rows
    bound1 = np.empty((n1, n2), dtype=np.float32)
    bound2 = np.empty((n1, n2), dtype=np.float32)
    dist = np.empty((x1.nnz, int(x2.row_sizes.max())), dtype=np.float32)
    for j in range(n2):
        q = x2.row(j)
        t2 = np.ascontiguousarray(embeddings[q.word_ids], dtype=np.float64)
        d = dist[:, : len(q)]
        euclidean_into(t1, sq_t1, t2, squared_norms(t2), d, row_block, col_block)
        row_mins = d.min(axis=1)
        bound1[:, j] = np.add.reduceat(w1 * row_mins.astype(np.float64), starts)
        col_mins = np.minimum.reduceat(d, starts, axis=0)
        bound2[:, j] = np.sum(
            col_mins.astype(np.float64) * q.weights.astype(np.float64)[None, :], axis=1
        )
    return bound1, bound2


def rwmd_quadratic(
    x1: HistogramSet,
    x2: HistogramSet,
    embeddings: np.ndarray,
    row_block: int = DEFAULT_ROW_BLOCK,
    col_block: int = DEFAULT_COL_BLOCK,
) -> DistanceBlock:
    """Symmetric relaxed bound: elementwise max of the two one-sided bounds."""
    bound1, bound2 = rwmd_bounds(x1, x2, embeddings, row_block, col_block)
    return DistanceBlock(np.maximum(bound1, bound2))


# ---------------------------------------------------------------------------
# Two-phase (linear-complexity) relaxation
# ---------------------------------------------------------------------------

def nearest_word_distances(
    embeddings: np.ndarray,
    query_vectors: np.ndarray,
    row_block: int = DEFAULT_ROW_BLOCK,
    col_block: int = DEFAULT_COL_BLOCK,
) -> np.ndarray:
    """Phase 1 for a single query: z[w] = distance from word w to its closest
    query word. Nonnegative everywhere; exactly zero at words that appear in
    the query itself."""
    q = np.atleast_2d(np.asarray(query_vectors))
    offsets = np.array([0, q.shape[0]], dtype=np.int64)
    return _phase1(embeddings, q, offsets, row_block, col_block)[:, 0]


def _phase1(
    embeddings: np.ndarray,
    stacked_query_vectors: np.ndarray,
    seg_offsets: np.ndarray,
    row_block: int,
    col_block: int,
) -> np.ndarray:
    """Nearest-query-word distance matrix z of shape (v_e, batch).

    Column j holds phase-1 distances for the query whose word vectors occupy
    rows seg_offsets[j]:seg_offsets[j+1] of the stacked matrix. Row-blocked
    over the vocabulary so working memory stays at one block of pairwise
    distances.
    """
    e64 = np.ascontiguousarray(embeddings, dtype=np.float64)
    sq_e = squared_norms(e64)
    t64 = np.ascontiguousarray(stacked_query_vectors, dtype=np.float64)
    if t64.shape[1] != e64.shape[1]:
        raise ValueError(f"dimension mismatch: {e64.shape[1]} vs {t64.shape[1]}")
    sq_t = squared_norms(t64)
    total_h = t64.shape[0]
    v_e = e64.shape[0]
    n_seg = len(seg_offsets) - 1
    starts = np.asarray(seg_offsets[:-1], dtype=np.int64)
    z = np.empty((v_e, n_seg), dtype=np.float32)
    scratch = np.empty((min(row_block, v_e), total_h), dtype=np.float32)
    for r0 in range(0, v_e, row_block):
        r1 = min(r0 + row_block, v_e)
        block = scratch[: r1 - r0]
        euclidean_into(e64[r0:r1], sq_e[r0:r1], t64, sq_t, block, row_block, col_block)
        z[r0:r1] = np.minimum.reduceat(block, starts, axis=1)
    return z


def _one_direction(
    resident: HistogramSet,
    resident_embeddings: np.ndarray,
    query_embeddings: np.ndarray,
    queries: HistogramSet,
    batch_size: int,
    row_block: int,
    col_block: int,
) -> np.ndarray:
    """One-sided bounds of moving resident mass toward each query, (n_res, n_q).

    ``resident`` indexes into ``resident_embeddings`` (typically restricted to
    the resident set's own words); query rows gather their vectors from
    ``query_embeddings``, which may be a different (larger) matrix.
    """
    _check_space(resident, resident_embeddings, "resident")
    out = np.empty((resident.n_rows, queries.n_rows), dtype=np.float32)
    for b0 in range(0, queries.n_rows, batch_size):
        b1 = min(b0 + batch_size, queries.n_rows)
        batch = queries.slice_rows(b0, b1)
        t = query_embeddings[batch.column_ids]
        z = _phase1(resident_embeddings, t, batch.row_offsets, row_block, col_block)
        out[:, b0:b1] = spmm(resident, z)
    return out


def lcrwmd_one_sided(
    x1: HistogramSet,
    query: Histogram,
    embeddings: np.ndarray,
    row_block: int = DEFAULT_ROW_BLOCK,
    col_block: int = DEFAULT_COL_BLOCK,
) -> np.ndarray:
    """First-direction bound from one query to every x1 row, length n1.

    Callers should restrict the vocabulary to x1's words first to get the
    advertised phase-1 cost; results do not depend on whether they did.
    """
    qset = HistogramSet.from_rows([(query.word_ids, query.weights)], x1.n_cols)
    return _one_direction(x1, embeddings, embeddings, qset, 1, row_block, col_block)[:, 0]


def lcrwmd_batched(
    x1: HistogramSet,
    x2_batch: HistogramSet,
    embeddings: np.ndarray,
    row_block: int = DEFAULT_ROW_BLOCK,
    col_block: int = DEFAULT_COL_BLOCK,
) -> np.ndarray:
    """One-sided bounds for a batch of queries at once, (n1, b).

    Phase 1 stacks all query word vectors and takes segmented row minima,
    yielding the (v_e, b) nearest-distance matrix in one pass; phase 2 is a
    single sparse-times-dense product. Columns are bitwise identical to b
    independent one-query calls.
    """
    if x2_batch.n_rows < 1:
        raise ValueError("batch must hold at least one query")
    return _one_direction(
        x1, embeddings, embeddings, x2_batch, x2_batch.n_rows, row_block, col_block
    )


def lcrwmd_full(
    x1: HistogramSet,
    x2: HistogramSet,
    embeddings: np.ndarray,
    batch_size: int = 32,
    row_block: int = DEFAULT_ROW_BLOCK,
    col_block: int = DEFAULT_COL_BLOCK,
) -> DistanceBlock:
    """Symmetric relaxed bound for all pairs via two one-sided passes, (n1, n2).

    The resident vocabulary is re-restricted per direction: to x1's words
    while x1 is resident, then to x2's words after the swap. The final matrix
    is the elementwise max of the two directions.
    """
    _check_space(x1, embeddings, "x1")
    _check_space(x2, embeddings, "x2")
    x1r, e1, _ = restrict_vocabulary(x1, embeddings)
    x2r, e2, _ = restrict_vocabulary(x2, embeddings)
    d1 = _one_direction(x1r, e1, embeddings, x2, batch_size, row_block, col_block)
    d2t = _one_direction(x2r, e2, embeddings, x1, batch_size, row_block, col_block)
    return DistanceBlock(np.maximum(d1, d2t.T))
