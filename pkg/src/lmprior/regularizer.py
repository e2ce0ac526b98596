"""Prior penalties on item embeddings and their exact gradients.

Two penalties: an isotropic L2 pull toward the origin, and a graph penalty
sum_{i in batch} sum_{k ~ i} s_ik * ||Z_i - Z_k||^2 that pulls prior-similar
items together. The graph penalty keeps the ordered-pair convention: an edge
with both endpoints in the batch contributes once per direction, so a
full-batch evaluation matches the dense double-sum quadratic form.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .prior import SimilarityGraph


@dataclass
class PenaltyResult:
    """Penalty value with its sparse gradient (item index -> d-vector)."""

    value: float
    gradient: dict[int, np.ndarray]


def l2_penalty(z: np.ndarray, items: Iterable[int] | None = None) -> PenaltyResult:
    """Sum of squared embedding norms; gradient 2*Z_i per touched item.

    Args:
        z: (N, d) embedding matrix.
        items: restrict to these rows (minibatch use); all rows when None.
    """
    z = np.asarray(z, dtype=np.float64)
    if items is None:
        idx = np.arange(z.shape[0])
    else:
        idx = np.fromiter(items, dtype=np.int64)
    value = float(np.sum(z[idx] ** 2))
    gradient = {int(i): 2.0 * z[i] for i in idx}
    return PenaltyResult(value=value, gradient=gradient)


def graph_penalty(
    z: np.ndarray, graph: SimilarityGraph, batch: Iterable[int]
) -> PenaltyResult:
    """Neighbor-truncated similarity penalty over a batch of items.

    For each batch item i and each graph neighbor k, adds s_ik*||Z_i - Z_k||^2
    and accumulates 2*s_ik*(Z_i - Z_k) into i's gradient and its negation into
    k's. Gradients therefore also flow to neighbors outside the batch.

    Raises:
        IndexError: batch contains an item id >= graph.num_items.
    """
    z = np.asarray(z, dtype=np.float64)
    batch_idx = np.unique(np.fromiter(batch, dtype=np.int64))
    if batch_idx.size and (batch_idx.min() < 0 or batch_idx.max() >= graph.num_items):
        raise IndexError(
            f"batch item out of range for graph with {graph.num_items} items"
        )
    value, grad = _edge_terms(z, graph, batch_idx)
    gradient = {int(i): grad[i] for i in np.flatnonzero(np.any(grad != 0.0, axis=1))}
    # batch items with all-zero gradient (e.g. isolated nodes) still belong
    for i in batch_idx:
        gradient.setdefault(int(i), np.zeros(z.shape[1]))
    return PenaltyResult(value=value, gradient=gradient)


def graph_penalty_dense(
    z: np.ndarray,
    graph: SimilarityGraph,
    batch: np.ndarray,
    grad_out: np.ndarray,
    scale: float = 1.0,
) -> float:
    """Training-loop variant: accumulate scale * gradient into a dense buffer.

    Same math as graph_penalty (shared edge gathering); returns the raw
    penalty value (unscaled).
    """
    batch_idx = np.unique(np.asarray(batch, dtype=np.int64))
    value, grad = _edge_terms(np.asarray(z, dtype=np.float64), graph, batch_idx)
    grad_out += scale * grad
    return value


def _edge_terms(
    z: np.ndarray, graph: SimilarityGraph, batch_idx: np.ndarray
) -> tuple[float, np.ndarray]:
    if batch_idx.size == 0 or graph.num_edges == 0:
        return 0.0, np.zeros_like(z)
    indptr, nbr, w = graph.adjacency()
    starts = indptr[batch_idx]
    counts = indptr[batch_idx + 1] - starts
    total = int(counts.sum())
    if total == 0:
        return 0.0, np.zeros_like(z)
    # CSR row gather: global arange shifted by each row's start offset.
    shift = starts - np.concatenate(([0], np.cumsum(counts)[:-1]))
    take = np.arange(total) + np.repeat(shift, counts)
    ii = np.repeat(batch_idx, counts)
    kk = nbr[take]
    ss = w[take]
    diffs = z[ii] - z[kk]
    sq = np.einsum("ij,ij->i", diffs, diffs)
    value = float(np.dot(ss, sq))
    contrib = (2.0 * ss)[:, None] * diffs
    # Duplicate-safe scatter-add via bincount on flattened (row, col) indices.
    d = z.shape[1]
    cols = np.arange(d)
    idx = np.concatenate(((ii * d)[:, None] + cols, (kk * d)[:, None] + cols))
    wts = np.concatenate((contrib, -contrib))
    grad = np.bincount(idx.ravel(), weights=wts.ravel(), minlength=z.size)
    return value, grad.reshape(z.shape)


def laplacian_form(z: np.ndarray, s: np.ndarray) -> float:
    """Quadratic form z^T Lambda z of the graph-prior precision matrix.

    Lambda is the dN x dN block matrix with off-diagonal blocks -2*s_ik*I_d
    and diagonal blocks 2*sum_{k != i} s_ik * I_d; the result equals the
    ordered double sum over all pairs. Test utility, dense, small N only.

    Args:
        z: (N, d) embeddings.
        s: (N, N) symmetric similarity matrix with zero diagonal.

    Raises:
        ValueError: s not square or not exactly symmetric.
    """
    z = np.asarray(z, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    n, d = z.shape
    if s.shape != (n, n):
        raise ValueError(f"similarity matrix must be {n}x{n}, got {s.shape}")
    if not np.array_equal(s, s.T):
        raise ValueError("similarity matrix must be symmetric")
    off = -2.0 * s
    diag = 2.0 * (s.sum(axis=1) - np.diag(s))
    lam_scalar = off + np.diag(diag - np.diag(off))
    lam = np.kron(lam_scalar, np.eye(d))
    flat = z.reshape(-1)
    return float(flat @ lam @ flat)
