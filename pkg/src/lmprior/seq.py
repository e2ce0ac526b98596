"""Attentive next-item model with tied item embeddings and a manual backward.

A single scaled dot-product attention block reads a length-capped history,
the last position queries all positions, and the attended vector scores the
full catalog against the same item embedding table used on the input side.
Item vectors come either from a free table or from a tanh MLP over fixed
metadata features; the prior penalty always applies to the encoded vectors.

All forward/backward math is float64 numpy so finite-difference checks hold
to tight tolerances and runs are bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import InteractionLog
from .errors import DataError, NumericError
from .optim import Optimizer
from .prior import SimilarityGraph
from .regularizer import graph_penalty_dense, l2_penalty

CHECKPOINT_MAGIC = b"LMPM0001"
MODEL_KIND_SEQ = 1

ENCODER_TABLE = "table"
ENCODER_MLP = "mlp"
_ENCODER_CODES = {ENCODER_TABLE: 0, ENCODER_MLP: 1}
_ENCODER_NAMES = {v: k for k, v in _ENCODER_CODES.items()}

PRIOR_NONE = "none"
PRIOR_L2 = "l2"
PRIOR_GRAPH = "graph"


@dataclass
class SeqParams:
    """Model tensors. Table mode owns `z_table`; MLP mode owns w1/b1/w2/b2."""

    encoder: str
    num_items: int
    dim: int
    max_len: int
    pos: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    z_table: np.ndarray | None = None
    w1: np.ndarray | None = None
    b1: np.ndarray | None = None
    w2: np.ndarray | None = None
    b2: np.ndarray | None = None
    feature_dim: int = 0
    hidden_dim: int = 0

    def tensors(self) -> dict[str, np.ndarray]:
        """Named trainable tensors, in a fixed order."""
        out: dict[str, np.ndarray] = {}
        if self.encoder == ENCODER_TABLE:
            out["z_table"] = self.z_table
        else:
            out.update(w1=self.w1, b1=self.b1, w2=self.w2, b2=self.b2)
        out.update(pos=self.pos, wq=self.wq, wk=self.wk, wv=self.wv)
        return out


def init_seq_params(
    num_items: int,
    d: int = 64,
    max_len: int = 50,
    encoder: str = ENCODER_TABLE,
    feature_dim: int = 0,
    hidden_dim: int = 128,
    seed: int = 42,
) -> SeqParams:
    """Seeded init: weights uniform(-0.1/sqrt(fan_in), +), biases zero."""
    if encoder not in _ENCODER_CODES:
        raise ValueError(f"unknown encoder {encoder!r}")
    if encoder == ENCODER_MLP and feature_dim <= 0:
        raise ValueError("mlp encoder requires feature_dim > 0")
    rng = np.random.default_rng(seed)

    def u(fan_in: int, *shape: int) -> np.ndarray:
        s = 0.1 / np.sqrt(fan_in)
        return rng.uniform(-s, s, size=shape)

    params = SeqParams(
        encoder=encoder,
        num_items=num_items,
        dim=d,
        max_len=max_len,
        pos=u(d, max_len, d),
        wq=u(d, d, d),
        wk=u(d, d, d),
        wv=u(d, d, d),
        feature_dim=feature_dim if encoder == ENCODER_MLP else 0,
        hidden_dim=hidden_dim if encoder == ENCODER_MLP else 0,
    )
    if encoder == ENCODER_TABLE:
        params.z_table = u(d, num_items, d)
    else:
        params.w1 = u(feature_dim, feature_dim, hidden_dim)
        params.b1 = np.zeros(hidden_dim)
        params.w2 = u(hidden_dim, hidden_dim, d)
        params.b2 = np.zeros(d)
    return params


def encode_items(
    params: SeqParams, features: np.ndarray | None = None
) -> np.ndarray:
    """Item embedding matrix Z (N, d): the table, or tanh MLP over features."""
    z, _ = _encode_with_cache(params, features)
    return z


def _encode_with_cache(
    params: SeqParams, features: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray | None]:
    if params.encoder == ENCODER_TABLE:
        return params.z_table, None
    if features is None:
        raise ValueError("mlp encoder requires item features")
    if features.shape != (params.num_items, params.feature_dim):
        raise ValueError(
            f"features shape {features.shape}, expected "
            f"({params.num_items}, {params.feature_dim})"
        )
    h = np.tanh(features @ params.w1 + params.b1)
    return h @ params.w2 + params.b2, h


def _encoder_backward(
    params: SeqParams, features: np.ndarray, h: np.ndarray, dz: np.ndarray
) -> dict[str, np.ndarray]:
    dw2 = h.T @ dz
    db2 = dz.sum(axis=0)
    dh = (dz @ params.w2.T) * (1.0 - h * h)
    return {
        "w1": features.T @ dh,
        "b1": dh.sum(axis=0),
        "w2": dw2,
        "b2": db2,
    }


def _pad_histories(
    histories: list[list[int]], max_len: int
) -> tuple[np.ndarray, np.ndarray]:
    """Right-truncate to the last max_len items, pad with 0, return lengths."""
    lens = np.array([min(len(h), max_len) for h in histories], dtype=np.int64)
    if np.any(lens == 0):
        raise ValueError("histories must be non-empty")
    width = int(lens.max())
    mat = np.zeros((len(histories), width), dtype=np.int64)
    for row, h in enumerate(histories):
        tail = h[-max_len:]
        mat[row, : len(tail)] = tail
    return mat, lens


def _forward_batch(
    params: SeqParams, z: np.ndarray, hist: np.ndarray, lens: np.ndarray
) -> tuple[np.ndarray, dict]:
    """Batched attention forward. Returns logits (B, N) and a backward cache."""
    b, width = hist.shape
    d = params.dim
    mask = np.arange(width)[None, :] < lens[:, None]
    e = z[hist] + params.pos[:width][None, :, :]
    rows = np.arange(b)
    q_idx = lens - 1
    eq = e[rows, q_idx]
    q = eq @ params.wq
    k = e @ params.wk
    v = e @ params.wv
    scores = np.einsum("bld,bd->bl", k, q) / np.sqrt(d)
    scores = np.where(mask, scores, -np.inf)
    shifted = scores - scores.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    alpha = expd / expd.sum(axis=1, keepdims=True)
    attended = np.einsum("bl,bld->bd", alpha, v)
    logits = attended @ z.T
    cache = dict(
        z=z, hist=hist, lens=lens, mask=mask, e=e, eq=eq, q=q, k=k, v=v,
        alpha=alpha, attended=attended, q_idx=q_idx,
    )
    return logits, cache


def _backward_batch(
    params: SeqParams, cache: dict, dlogits: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients for pos/wq/wk/wv plus the dense (N, d) grad of encoded Z."""
    z, hist, mask = cache["z"], cache["hist"], cache["mask"]
    e, eq, q, k, v = cache["e"], cache["eq"], cache["q"], cache["k"], cache["v"]
    alpha, attended, q_idx = cache["alpha"], cache["attended"], cache["q_idx"]
    b, width = hist.shape
    d = params.dim
    rows = np.arange(b)

    dz = dlogits.T @ attended  # output-side tie
    dattended = dlogits @ z
    dalpha = np.einsum("bld,bd->bl", v, dattended)
    dv = alpha[:, :, None] * dattended[:, None, :]
    dscores = alpha * (dalpha - np.sum(alpha * dalpha, axis=1, keepdims=True))
    dq = np.einsum("bl,bld->bd", dscores, k) / np.sqrt(d)
    dk = dscores[:, :, None] * q[:, None, :] / np.sqrt(d)

    de = dk @ params.wk.T + dv @ params.wv.T
    deq = dq @ params.wq.T
    de[rows, q_idx] += deq

    grads = {
        "wq": eq.T @ dq,
        "wk": np.einsum("blf,bld->fd", e, dk),
        "wv": np.einsum("blf,bld->fd", e, dv),
    }
    dpos = np.zeros_like(params.pos)
    dpos[:width] = de.sum(axis=0)
    grads["pos"] = dpos

    flat_idx = hist[mask]
    np.add.at(dz, flat_idx, de[mask])
    return grads, dz


def forward(
    params: SeqParams, history: list[int], features: np.ndarray | None = None
) -> np.ndarray:
    """Scores over the full catalog given one interaction history."""
    if not history:
        raise ValueError("history must be non-empty")
    z, _ = _encode_with_cache(params, features)
    hist, lens = _pad_histories([list(history)], params.max_len)
    logits, _ = _forward_batch(params, z, hist, lens)
    return logits[0]


def ce_loss(logits: np.ndarray, target: int) -> tuple[float, np.ndarray]:
    """Full-catalog softmax cross-entropy and its gradient in the logits."""
    if not (0 <= target < logits.shape[0]):
        raise IndexError(f"target {target} out of range for {logits.shape[0]} items")
    shifted = logits - logits.max()
    logz = np.log(np.sum(np.exp(shifted)))
    value = float(logz - shifted[target])
    grad = np.exp(shifted - logz)
    grad[target] -= 1.0
    return value, grad


def _batch_loss_and_grads(
    params: SeqParams,
    z: np.ndarray,
    hist: np.ndarray,
    lens: np.ndarray,
    targets: np.ndarray,
) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Mean cross-entropy over the batch; returns (loss, grads, dz)."""
    b = hist.shape[0]
    logits, cache = _forward_batch(params, z, hist, lens)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=1))
    rows = np.arange(b)
    value = float(np.mean(logz - shifted[rows, targets]))
    dlogits = np.exp(shifted - logz[:, None])
    dlogits[rows, targets] -= 1.0
    dlogits /= b
    grads, dz = _backward_batch(params, cache, dlogits)
    return value, grads, dz


def training_examples(log: InteractionLog) -> list[tuple[int, int]]:
    """(user, cut) pairs: history = timeline[:cut], target = timeline[cut]."""
    return [
        (user, cut)
        for user, tl in enumerate(log.timelines)
        for cut in range(1, len(tl))
    ]


def train_seq(
    log: InteractionLog,
    d: int = 64,
    max_len: int = 50,
    lr: float = 1e-3,
    epochs: int = 50,
    rho: float = 1.0,
    prior: str = PRIOR_GRAPH,
    graph: SimilarityGraph | None = None,
    encoder: str = ENCODER_TABLE,
    features: np.ndarray | None = None,
    hidden_dim: int = 128,
    batch_size: int = 128,
    seed: int = 42,
    optimizer: str = "adam",
    clip: float | None = None,
    verbose: bool = False,
) -> SeqParams:
    """Train the attentive model on next-item prediction.

    The step loss is the batch-mean cross-entropy plus rho times the penalty
    over items touched by the batch (history positions and targets). As in
    the factorization trainer, rho 0 skips the penalty path entirely.
    """
    if prior not in (PRIOR_NONE, PRIOR_L2, PRIOR_GRAPH):
        raise ValueError(f"unknown prior kind {prior!r}")
    if prior == PRIOR_GRAPH and graph is None:
        raise ValueError("prior 'graph' requires a similarity graph")
    examples = training_examples(log)
    if not examples:
        raise DataError("no timelines with at least two interactions to train on")
    feature_dim = features.shape[1] if features is not None else 0
    params = init_seq_params(
        log.num_items, d=d, max_len=max_len, encoder=encoder,
        feature_dim=feature_dim, hidden_dim=hidden_dim, seed=seed,
    )
    tensors = params.tensors()
    opt = Optimizer(kind=optimizer, lr=lr, clip=clip)
    rng = np.random.default_rng(seed + 1)
    ex_arr = np.array(examples, dtype=np.int64)
    use_penalty = prior != PRIOR_NONE and rho != 0.0

    for epoch in range(epochs):
        order = rng.permutation(len(examples))
        epoch_loss = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            users = ex_arr[idx, 0]
            cuts = ex_arr[idx, 1]
            histories = [log.timelines[u][:c] for u, c in zip(users, cuts)]
            targets = np.array(
                [log.timelines[u][c] for u, c in zip(users, cuts)], dtype=np.int64
            )
            hist, lens = _pad_histories(histories, max_len)
            z, h_cache = _encode_with_cache(params, features)
            loss, grads, dz = _batch_loss_and_grads(params, z, hist, lens, targets)

            if use_penalty:
                valid = np.arange(hist.shape[1])[None, :] < lens[:, None]
                batch_items = np.concatenate([hist[valid], targets])
                if prior == PRIOR_GRAPH:
                    pen = graph_penalty_dense(z, graph, batch_items, dz, scale=rho)
                else:
                    res = l2_penalty(z, np.unique(batch_items))
                    pen = res.value
                    for item, g in res.gradient.items():
                        dz[item] += rho * g
                loss += rho * pen
            if not np.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            epoch_loss += loss * len(idx)

            if params.encoder == ENCODER_TABLE:
                grads["z_table"] = dz
            else:
                grads.update(_encoder_backward(params, features, h_cache, dz))
            opt.step(tensors, grads)
        if verbose:
            print(f"epoch {epoch + 1}/{epochs}  loss={epoch_loss / len(examples):.4f}")
    return params


def score_users(
    params: SeqParams,
    histories: list[list[int]],
    features: np.ndarray | None = None,
    batch_size: int = 256,
) -> np.ndarray:
    """Catalog scores for many users' histories, batched for speed."""
    z, _ = _encode_with_cache(params, features)
    out = np.empty((len(histories), params.num_items))
    for start in range(0, len(histories), batch_size):
        chunk = histories[start : start + batch_size]
        hist, lens = _pad_histories(chunk, params.max_len)
        logits, _ = _forward_batch(params, z, hist, lens)
        out[start : start + len(chunk)] = logits
    return out


def save_checkpoint(params: SeqParams, path: str | Path) -> None:
    """LMPM0001 kind=1 header plus the tensor list in `tensors()` order."""
    header = struct.pack(
        "<IIIIIII",
        MODEL_KIND_SEQ,
        params.num_items,
        params.dim,
        params.max_len,
        _ENCODER_CODES[params.encoder],
        params.feature_dim,
        params.hidden_dim,
    )
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(header)
        for arr in params.tensors().values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> SeqParams:
    data = Path(path).read_bytes()
    if len(data) < 36 or data[:8] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not an LMPM0001 checkpoint")
    kind, n, d, max_len, enc_code, feature_dim, hidden_dim = struct.unpack(
        "<IIIIIII", data[8:36]
    )
    if kind != MODEL_KIND_SEQ:
        raise DataError(f"{path}: checkpoint kind {kind}, expected sequential (1)")
    if enc_code not in _ENCODER_NAMES:
        raise DataError(f"{path}: unknown encoder code {enc_code}")
    encoder = _ENCODER_NAMES[enc_code]
    params = init_seq_params(
        n, d=d, max_len=max_len, encoder=encoder,
        feature_dim=feature_dim or 1, hidden_dim=hidden_dim or 1, seed=0,
    )
    params.feature_dim = feature_dim
    params.hidden_dim = hidden_dim
    offset = 36

    def take(shape: tuple[int, ...]) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        return np.array(arr, dtype=np.float64).reshape(shape)

    try:
        if encoder == ENCODER_TABLE:
            params.z_table = take((n, d))
            params.w1 = params.b1 = params.w2 = params.b2 = None
        else:
            params.w1 = take((feature_dim, hidden_dim))
            params.b1 = take((hidden_dim,))
            params.w2 = take((hidden_dim, d))
            params.b2 = take((d,))
        params.pos = take((max_len, d))
        params.wq = take((d, d))
        params.wk = take((d, d))
        params.wv = take((d, d))
    except ValueError as exc:
        raise DataError(f"{path}: truncated checkpoint") from exc
    if offset != len(data):
        raise DataError(f"{path}: trailing bytes in checkpoint")
    return params


def checkpoint_kind(path: str | Path) -> int:
    """Model kind code from an LMPM0001 file without loading tensors."""
    with open(path, "rb") as fh:
        head = fh.read(12)
    if len(head) < 12 or head[:8] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not an LMPM0001 checkpoint")
    return struct.unpack("<I", head[8:12])[0]
