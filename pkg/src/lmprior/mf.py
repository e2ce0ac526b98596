"""BPR matrix factorization with optional prior penalties on item factors.

The item factor rows are the embeddings the prior regularizes; metadata
enters only through the similarity graph. Training is single-threaded and
bit-reproducible for a fixed seed, data order, and hyperparameters.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .corpus import InteractionLog
from .errors import DataError, NumericError
from .optim import Optimizer
from .prior import SimilarityGraph
from .regularizer import graph_penalty_dense, l2_penalty

CHECKPOINT_MAGIC = b"LMPM0001"
MODEL_KIND_MF = 0

PRIOR_NONE = "none"
PRIOR_L2 = "l2"
PRIOR_GRAPH = "graph"


@dataclass
class MfParams:
    """Learned factors: users (M, d) and items (N, d), float64 internally."""

    user_factors: np.ndarray
    item_factors: np.ndarray

    @property
    def dim(self) -> int:
        return self.user_factors.shape[1]

    def scorer(self):
        """Returns score_all(user) -> scores over the full catalog."""
        u, z = self.user_factors, self.item_factors

        def score_all(user: int) -> np.ndarray:
            return u[user] @ z.T

        return score_all


def init_params(num_users: int, num_items: int, d: int, seed: int) -> MfParams:
    """Seeded uniform(-0.1/sqrt(d), 0.1/sqrt(d)) initialization."""
    rng = np.random.default_rng(seed)
    scale = 0.1 / np.sqrt(d)
    u = rng.uniform(-scale, scale, size=(num_users, d))
    z = rng.uniform(-scale, scale, size=(num_items, d))
    return MfParams(user_factors=u, item_factors=z)


def score(params: MfParams, user: int, item: int) -> float:
    """Dot-product preference score <U_j, Z_i>."""
    m, n = params.user_factors.shape[0], params.item_factors.shape[0]
    if not (0 <= user < m and 0 <= item < n):
        raise IndexError(f"user {user} or item {item} out of range ({m} users, {n} items)")
    return float(params.user_factors[user] @ params.item_factors[item])


def bpr_loss(
    params: MfParams, user: int, pos: int, neg: int
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Pairwise logistic loss -log sigma(score(j,i) - score(j,k)).

    Returns (value, grad_Uj, grad_Zi, grad_Zk).
    """
    if pos == neg:
        raise ValueError("positive and negative items must differ")
    u = params.user_factors[user]
    zi = params.item_factors[pos]
    zk = params.item_factors[neg]
    x = float(u @ (zi - zk))
    value = float(np.logaddexp(0.0, -x))
    gx = -float(expit(-x))  # d/dx of softplus(-x)
    return value, gx * (zi - zk), gx * u, -gx * u


def _user_histories(log: InteractionLog) -> list[set[int]]:
    return [set(t) for t in log.timelines]


def train_mf(
    log: InteractionLog,
    d: int = 64,
    lr: float = 1e-3,
    epochs: int = 50,
    rho: float = 1.0,
    prior: str = PRIOR_GRAPH,
    graph: SimilarityGraph | None = None,
    negatives: int = 1,
    batch_size: int = 128,
    seed: int = 42,
    optimizer: str = "adam",
    clip: float | None = None,
    verbose: bool = False,
) -> MfParams:
    """Train BPR-MF on the train log, optionally with a prior penalty.

    Each epoch iterates all positives in a seeded shuffled order, samples
    uniform negatives outside the user's history, and steps the optimizer on
    the summed pairwise loss of a minibatch plus rho times the penalty over
    the batch's touched items. The penalty path is skipped entirely when rho
    is 0, so the trajectory is bit-identical to unregularized training.

    Raises:
        DataError: empty training set.
        ValueError: prior "graph" without a graph.
    """
    if prior not in (PRIOR_NONE, PRIOR_L2, PRIOR_GRAPH):
        raise ValueError(f"unknown prior kind {prior!r}")
    if prior == PRIOR_GRAPH and graph is None:
        raise ValueError("prior 'graph' requires a similarity graph")
    positives = [
        (user, item) for user, tl in enumerate(log.timelines) for item in tl
    ]
    if not positives:
        raise DataError("empty training set")
    n_items = log.num_items
    params = init_params(log.num_users, n_items, d, seed)
    tensors = {"user_factors": params.user_factors, "item_factors": params.item_factors}
    opt = Optimizer(kind=optimizer, lr=lr, clip=clip)
    rng = np.random.default_rng(seed + 1)
    histories = _user_histories(log)
    pos_arr = np.array(positives, dtype=np.int64)
    use_penalty = prior != PRIOR_NONE and rho != 0.0

    for epoch in range(epochs):
        order = rng.permutation(len(positives))
        epoch_loss = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            users = pos_arr[idx, 0]
            pos_items = pos_arr[idx, 1]
            triples_u, triples_i, triples_k = [], [], []
            for u, i in zip(users.tolist(), pos_items.tolist()):
                hist = histories[u]
                if len(hist) >= n_items:
                    continue  # no valid negative exists
                for _ in range(negatives):
                    k = int(rng.integers(0, n_items))
                    while k in hist:
                        k = int(rng.integers(0, n_items))
                    triples_u.append(u)
                    triples_i.append(i)
                    triples_k.append(k)
            if not triples_u:
                continue
            uu = np.array(triples_u)
            ii = np.array(triples_i)
            kk = np.array(triples_k)

            uf, zf = params.user_factors, params.item_factors
            diff = zf[ii] - zf[kk]
            x = np.einsum("ij,ij->i", uf[uu], diff)
            loss = float(np.sum(np.logaddexp(0.0, -x)))
            gx = -expit(-x)

            grad_u = np.zeros_like(uf)
            grad_z = np.zeros_like(zf)
            np.add.at(grad_u, uu, gx[:, None] * diff)
            np.add.at(grad_z, ii, gx[:, None] * uf[uu])
            np.add.at(grad_z, kk, -gx[:, None] * uf[uu])

            if use_penalty:
                batch_items = np.concatenate([ii, kk])
                if prior == PRIOR_GRAPH:
                    pen = graph_penalty_dense(zf, graph, batch_items, grad_z, scale=rho)
                else:
                    res = l2_penalty(zf, np.unique(batch_items))
                    pen = res.value
                    for item, g in res.gradient.items():
                        grad_z[item] += rho * g
                loss += rho * pen
            if not np.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            epoch_loss += loss
            opt.step(tensors, {"user_factors": grad_u, "item_factors": grad_z})
        if verbose:
            print(f"epoch {epoch + 1}/{epochs}  loss={epoch_loss / len(positives):.4f}")
    return params


def save_checkpoint(params: MfParams, path: str | Path) -> None:
    """LMPM0001 kind=0: u32 M, u32 N, u32 d, then U and Z as f32 row-major."""
    u = np.ascontiguousarray(params.user_factors, dtype="<f4")
    z = np.ascontiguousarray(params.item_factors, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIII", MODEL_KIND_MF, u.shape[0], z.shape[0], u.shape[1]))
        fh.write(u.tobytes())
        fh.write(z.tobytes())


def load_checkpoint(path: str | Path) -> MfParams:
    data = Path(path).read_bytes()
    if len(data) < 24 or data[:8] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not an LMPM0001 checkpoint")
    kind, m, n, d = struct.unpack("<IIII", data[8:24])
    if kind != MODEL_KIND_MF:
        raise DataError(f"{path}: checkpoint kind {kind}, expected MF (0)")
    expected = 24 + 4 * (m + n) * d
    if len(data) != expected:
        raise DataError(f"{path}: truncated checkpoint")
    u = np.frombuffer(data, dtype="<f4", count=m * d, offset=24).reshape(m, d)
    z = np.frombuffer(data, dtype="<f4", count=n * d, offset=24 + 4 * m * d).reshape(n, d)
    return MfParams(
        user_factors=np.array(u, dtype=np.float64),
        item_factors=np.array(z, dtype=np.float64),
    )
