"""Item-similarity graph construction from text embeddings.

Two kernels over embedding space: a global RBF whose bandwidth is set from
the average per-dimension variance of the data, and a per-item Mahalanobis
kernel whose covariance is estimated from the item's K nearest neighbors
(ridge-shrunk so it is always invertible). Edges are restricted to exact
KNN pairs and symmetrized, then persisted as a sparse binary graph.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .errors import DataError, NumericError

GRAPH_MAGIC = b"LMPG0001"
KERNEL_GLOBAL = "global"
KERNEL_LOCAL = "local"
_KERNEL_CODE = {KERNEL_GLOBAL: 0, KERNEL_LOCAL: 1}
_KERNEL_NAME = {v: k for k, v in _KERNEL_CODE.items()}

# stored weights are f32; keep them strictly positive after the cast
_MIN_WEIGHT = float(np.finfo(np.float32).tiny)


@dataclass
class NeighborLists:
    """Exact K-nearest-neighbor lists under squared Euclidean distance.

    indices[i] holds min(K, N) item ids sorted by ascending distance to item
    i, self first, distance ties broken by lower item index.
    """

    k: int
    indices: np.ndarray  # int64, shape (N, min(K, N))


@dataclass
class LocalGaussian:
    """Empirical first and second moments of one item's KNN neighborhood."""

    mean: np.ndarray  # (d',)
    cov: np.ndarray  # (d', d'), symmetric PSD


@dataclass
class SimilarityGraph:
    """Sparse symmetric item graph; each unordered pair stored once (i < k)."""

    num_items: int
    src: np.ndarray  # u32-compatible int array, shape (E,)
    dst: np.ndarray  # shape (E,), src[e] < dst[e]
    weights: np.ndarray  # float32 in (0, 1], shape (E,)
    kernel: str
    k: int
    param: float  # lambda for global, epsilon for local

    def __post_init__(self) -> None:
        self._adj: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None

    @property
    def num_edges(self) -> int:
        return int(self.src.shape[0])

    def adjacency(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """CSR-style (indptr, neighbor ids, weights) over both edge directions."""
        if self._adj is None:
            ii = np.concatenate([self.src, self.dst])
            kk = np.concatenate([self.dst, self.src])
            ww = np.concatenate([self.weights, self.weights]).astype(np.float64)
            order = np.argsort(ii, kind="stable")
            ii, kk, ww = ii[order], kk[order], ww[order]
            indptr = np.zeros(self.num_items + 1, dtype=np.int64)
            np.add.at(indptr, ii + 1, 1)
            np.cumsum(indptr, out=indptr)
            self._adj = (indptr, kk.astype(np.int64), ww)
        return self._adj

    def neighbors(self, item: int) -> tuple[np.ndarray, np.ndarray]:
        indptr, nbr, w = self.adjacency()
        lo, hi = indptr[item], indptr[item + 1]
        return nbr[lo:hi], w[lo:hi]


def _pairwise_sq_dists(x: np.ndarray, block: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances from each row of block to all rows of x.

    Computed from explicit differences, not the expanded dot-product form,
    so duplicate points get an exact zero and ties resolve deterministically.
    """
    diff = block[:, None, :] - x[None, :, :]
    return np.sum(diff * diff, axis=2)


def build_knn(x: np.ndarray, k: int) -> NeighborLists:
    """Exact brute-force K-nearest-neighbor lists (self always first).

    Distance ties break by lower item index. Accumulates in float64.

    Args:
        x: (N, d') embedding matrix.
        k: neighborhood size including self, 1 <= k <= N (larger k is capped).
    """
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    k_eff = min(k, n)
    out = np.empty((n, k_eff), dtype=np.int64)
    d = max(1, x.shape[1])
    block_size = max(1, min(n, 8_388_608 // (n * d)))
    for start in range(0, n, block_size):
        stop = min(start + block_size, n)
        d2 = _pairwise_sq_dists(x, x[start:stop])
        rows = np.arange(start, stop)
        # force self strictly first even among exact duplicates
        d2[np.arange(stop - start), rows] = -1.0
        if k_eff < n:
            part = np.argpartition(d2, k_eff - 1, axis=1)[:, :k_eff]
            # argpartition may drop the lower-index member of a tie straddling
            # the boundary; repair such rows against the full candidate set
            kth = np.take_along_axis(d2, part, axis=1).max(axis=1)
            tie_rows = np.flatnonzero((d2 <= kth[:, None]).sum(axis=1) > k_eff)
            for r in tie_rows:
                cand = np.flatnonzero(d2[r] <= kth[r])
                order_r = np.lexsort((cand, d2[r][cand]))
                part[r] = cand[order_r][:k_eff]
        else:
            part = np.broadcast_to(np.arange(n), (stop - start, n))
        pd = np.take_along_axis(d2, part, axis=1)
        # lexsort: primary ascending distance, secondary ascending index
        order = np.lexsort((part, pd), axis=1)
        out[start:stop] = np.take_along_axis(part, order, axis=1)
    return NeighborLists(k=k_eff, indices=out)


def global_bandwidth(x: np.ndarray) -> float:
    """Inverse of the average per-dimension variance across all items.

    Args:
        x: (N, d') embeddings, N >= 2.

    Raises:
        NumericError: zero variance (all embeddings identical).
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if n < 2:
        raise ValueError(f"need at least 2 items, got {n}")
    mu = x.mean(axis=0)
    var = float(np.sum((x - mu) ** 2) / (n * d))
    if var <= 0.0:
        raise NumericError("degenerate prior: all embeddings identical (zero variance)")
    return 1.0 / var


def global_similarity(x_i: np.ndarray, x_k: np.ndarray, lam: float) -> float:
    """RBF similarity exp(-lam/2 * ||x_i - x_k||^2), in (0, 1]."""
    if lam <= 0.0:
        raise ValueError(f"lambda must be positive, got {lam}")
    diff = np.asarray(x_i, dtype=np.float64) - np.asarray(x_k, dtype=np.float64)
    s = float(np.exp(-0.5 * lam * np.dot(diff, diff)))
    return max(s, _MIN_WEIGHT)


def local_moments(x: np.ndarray, neighbor_ids: np.ndarray) -> LocalGaussian:
    """Mean and biased covariance (divide by K) of a neighborhood."""
    pts = np.asarray(x, dtype=np.float64)[np.asarray(neighbor_ids, dtype=np.int64)]
    if pts.shape[0] < 1:
        raise ValueError("neighborhood must contain at least one point")
    mean = pts.mean(axis=0)
    centered = pts - mean
    cov = centered.T @ centered / pts.shape[0]
    return LocalGaussian(mean=mean, cov=cov)


def shrink(cov: np.ndarray, eps: float) -> np.ndarray:
    """Trace-scaled ridge: cov + eps*(trace/d')*I, or eps*I when trace is 0.

    Guarantees strict positive definiteness while keeping the result
    equivariant under common rotations and uniform scalings of the data.
    """
    if eps <= 0.0:
        raise ValueError(f"epsilon must be positive, got {eps}")
    cov = np.asarray(cov, dtype=np.float64)
    d = cov.shape[0]
    tr = float(np.trace(cov))
    ridge = eps if tr == 0.0 else eps * tr / d
    return cov + ridge * np.eye(d)


def local_similarity(x_i: np.ndarray, x_k: np.ndarray, cov: np.ndarray) -> float:
    """Mahalanobis similarity exp(-1/2 (x_i-x_k)^T cov^{-1} (x_i-x_k)).

    Solved through a Cholesky factorization; cov must already be shrunk.

    Raises:
        NumericError: factorization failure (cov not positive definite).
    """
    diff = np.asarray(x_i, dtype=np.float64) - np.asarray(x_k, dtype=np.float64)
    try:
        factor = cho_factor(np.asarray(cov, dtype=np.float64), lower=True)
        w = cho_solve(factor, diff)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular local covariance: {exc}") from None
    s = float(np.exp(-0.5 * float(diff @ w)))
    return max(s, _MIN_WEIGHT)


def _directional_local_weights(
    x: np.ndarray, knn: np.ndarray, eps: float, rows: range
) -> dict[tuple[int, int], float]:
    """Weights s_i(i,k) for k in N_i \\ {i}, for each i in rows."""
    out: dict[tuple[int, int], float] = {}
    for i in rows:
        nbrs = knn[i]
        cov = shrink(local_moments(x, nbrs).cov, eps)
        others = nbrs[nbrs != i]
        if others.size == 0:
            continue
        diffs = (x[others] - x[i]).astype(np.float64)
        try:
            chol = np.linalg.cholesky(cov)
            w = solve_triangular(chol, diffs.T, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"singular covariance for item {i}: {exc}") from None
        maha = np.einsum("ij,ij->j", w, w)
        sims = np.exp(-0.5 * maha)
        for k, s in zip(others.tolist(), sims.tolist()):
            out[(i, k)] = s
    return out


def build_graph(
    x: np.ndarray,
    k: int,
    kernel: str = KERNEL_LOCAL,
    eps: float = 1e-3,
    symmetrize: str = "avg",
    threads: int = 1,
    bandwidth: float | None = None,
) -> SimilarityGraph:
    """Build the KNN-restricted similarity graph over item embeddings.

    Every pair {i, k} with k in N_i (self excluded) becomes one undirected
    edge. The global kernel value is symmetric as computed; the local kernel
    is direction-dependent, so the two directional values are combined (avg
    by default, max/min as alternatives) when both directions exist.

    Args:
        x: (N, d') embeddings.
        k: KNN size (self included).
        kernel: "global" or "local".
        eps: shrinkage strength for the local kernel.
        symmetrize: "avg" | "max" | "min" combiner for the local kernel.
        threads: worker threads for the per-item local-moment loop.
        bandwidth: fixed global-kernel lambda; None derives it from the data.
    """
    if kernel not in _KERNEL_CODE:
        raise ValueError(f"unknown kernel {kernel!r}")
    if symmetrize not in ("avg", "max", "min"):
        raise ValueError(f"unknown symmetrize mode {symmetrize!r}")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    nbr = build_knn(x, k)
    knn, k = nbr.indices, nbr.k

    if kernel == KERNEL_GLOBAL:
        lam = global_bandwidth(x) if bandwidth is None else float(bandwidth)
        if lam <= 0.0:
            raise ValueError(f"bandwidth must be positive, got {lam}")
        pairs = set()
        for i in range(n):
            for kk in knn[i]:
                if kk != i:
                    pairs.add((min(i, int(kk)), max(i, int(kk))))
        edges = sorted(pairs)
        weights = []
        for i, j in edges:
            weights.append(global_similarity(x[i], x[j], lam))
        param = lam
    else:
        if threads > 1:
            chunk = (n + threads - 1) // threads
            ranges = [range(s, min(s + chunk, n)) for s in range(0, n, chunk)]
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(
                    pool.map(lambda r: _directional_local_weights(x, knn, eps, r), ranges)
                )
            directional: dict[tuple[int, int], float] = {}
            for part in parts:
                directional.update(part)
        else:
            directional = _directional_local_weights(x, knn, eps, range(n))
        combined: dict[tuple[int, int], float] = {}
        combine = {"avg": lambda a, b: 0.5 * (a + b), "max": max, "min": min}[symmetrize]
        for (i, j), s in directional.items():
            key = (min(i, j), max(i, j))
            if key in combined:
                continue
            back = directional.get((j, i))
            combined[key] = s if back is None else combine(s, back)
        edges = sorted(combined)
        weights = [combined[e] for e in edges]
        param = eps

    src = np.array([e[0] for e in edges], dtype=np.int64)
    dst = np.array([e[1] for e in edges], dtype=np.int64)
    w = np.maximum(np.array(weights, dtype=np.float32), np.float32(_MIN_WEIGHT))
    return SimilarityGraph(
        num_items=n, src=src, dst=dst, weights=w, kernel=kernel, k=k, param=param
    )


def save_graph(graph: SimilarityGraph, path: str | Path) -> None:
    """Write the LMPG0001 binary: header, sorted edge records, 16-byte footer."""
    with open(path, "wb") as fh:
        fh.write(GRAPH_MAGIC)
        fh.write(struct.pack("<I", graph.num_items))
        fh.write(struct.pack("<Q", graph.num_edges))
        rec = np.empty(
            graph.num_edges, dtype=[("i", "<u4"), ("k", "<u4"), ("s", "<f4")]
        )
        rec["i"] = graph.src
        rec["k"] = graph.dst
        rec["s"] = graph.weights
        fh.write(rec.tobytes())
        fh.write(
            struct.pack(
                "<IIfI", _KERNEL_CODE[graph.kernel], graph.k, float(graph.param), 0
            )
        )


def load_graph(path: str | Path) -> SimilarityGraph:
    """Read an LMPG0001 binary back into a SimilarityGraph."""
    data = Path(path).read_bytes()
    if len(data) < 36 or data[:8] != GRAPH_MAGIC:
        raise DataError(f"{path}: not an LMPG0001 graph file")
    n = struct.unpack("<I", data[8:12])[0]
    num_edges = struct.unpack("<Q", data[12:20])[0]
    expected = 20 + 12 * num_edges + 16
    if len(data) != expected:
        raise DataError(
            f"{path}: truncated graph file (expected {expected} bytes, got {len(data)})"
        )
    rec = np.frombuffer(
        data, dtype=[("i", "<u4"), ("k", "<u4"), ("s", "<f4")], count=num_edges, offset=20
    )
    kind, k, param, _reserved = struct.unpack("<IIfI", data[-16:])
    if kind not in _KERNEL_NAME:
        raise DataError(f"{path}: unknown kernel code {kind}")
    weights = np.array(rec["s"], dtype=np.float32)
    if weights.size and (weights.min() <= 0.0 or weights.max() > 1.0):
        raise DataError(f"{path}: edge weights outside (0, 1]")
    return SimilarityGraph(
        num_items=n,
        src=np.array(rec["i"], dtype=np.int64),
        dst=np.array(rec["k"], dtype=np.int64),
        weights=weights,
        kernel=_KERNEL_NAME[kind],
        k=k,
        param=float(param),
    )


def default_k(num_items: int) -> int:
    """Default neighborhood size: floor(sqrt(N))."""
    return max(1, int(np.floor(np.sqrt(num_items))))
