"""Interaction-log ingestion, splits, cold-start tagging, and embedding I/O.

Internal indexing convention: users and items get 0-based contiguous indices
in order of first appearance in the input file, and per-user interaction
times are re-ranked to 1..T_j (file order breaks raw-timestamp ties). All
downstream structures refer to these internal indices only.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

EMBEDDING_MAGIC = b"LMPE0001"


@dataclass(frozen=True)
class Interaction:
    """One user-item event at a per-user time rank (1-based, contiguous)."""

    user: int
    item: int
    time: int


@dataclass
class InteractionLog:
    """Immutable interaction corpus with per-user timelines sorted by time.

    Attributes:
        num_users: M, count of distinct users.
        num_items: N, count of distinct items.
        timelines: per-user list of item indices; position t-1 holds the item
            interacted with at time t.
        user_tokens: external user id for each internal index.
        item_tokens: external item id for each internal index.
    """

    num_users: int
    num_items: int
    timelines: list[list[int]]
    user_tokens: list[str]
    item_tokens: list[str]
    user_index: dict[str, int] = field(repr=False, default_factory=dict)
    item_index: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        if not self.user_index:
            self.user_index = {tok: j for j, tok in enumerate(self.user_tokens)}
        if not self.item_index:
            self.item_index = {tok: i for i, tok in enumerate(self.item_tokens)}

    @property
    def num_interactions(self) -> int:
        return sum(len(t) for t in self.timelines)

    def history_before(self, user: int, time: int) -> set[int]:
        """Items user interacted with strictly before the given time rank."""
        return set(self.timelines[user][: time - 1])

    def iter_interactions(self):
        for user, timeline in enumerate(self.timelines):
            for t, item in enumerate(timeline, start=1):
                yield Interaction(user, item, t)


@dataclass
class Split:
    """Leave-last-out split: held-out (user, item) targets plus a train view."""

    train: InteractionLog
    validation: list[tuple[int, int]]
    test: list[tuple[int, int]]


@dataclass
class ColdStartTags:
    """Cold-start item and user sets under an interaction-count threshold."""

    cs_items: set[int]
    cs_users: set[int]
    threshold: int


def _detect_separator(first_line: str) -> str:
    return "\t" if "\t" in first_line else ","


def load_interactions(path: str | Path, header: bool = False) -> InteractionLog:
    """Parse a (user, item, timestamp) text file into an InteractionLog.

    Field separator (tab or comma) is auto-detected from the first data line.
    Raw timestamps only order events within a user; equal stamps keep file
    order. Internal indices follow first appearance.

    Args:
        path: interactions file, one event per line.
        header: skip the first line.

    Raises:
        DataError: file missing/empty or a line fails to parse.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"interactions file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if header:
        lines = lines[1:]
    if not any(line.strip() for line in lines):
        raise DataError(f"empty interactions file: {path}")

    sep = None
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    user_tokens: list[str] = []
    item_tokens: list[str] = []
    # (raw timestamp, file order) per user; stable sort keeps file order on ties
    raw: list[list[tuple[int, int, int]]] = []

    for lineno, line in enumerate(lines, start=2 if header else 1):
        if not line.strip():
            raise DataError(f"line {lineno}: blank line")
        if sep is None:
            sep = _detect_separator(line)
        parts = line.split(sep)
        if len(parts) != 3:
            raise DataError(
                f"line {lineno}: expected 3 fields separated by {sep!r}, got {len(parts)}"
            )
        utok, itok, stamp_s = (p.strip() for p in parts)
        try:
            stamp = int(stamp_s)
        except ValueError:
            raise DataError(f"line {lineno}: bad timestamp {stamp_s!r}") from None
        if utok not in user_index:
            user_index[utok] = len(user_tokens)
            user_tokens.append(utok)
            raw.append([])
        if itok not in item_index:
            item_index[itok] = len(item_tokens)
            item_tokens.append(itok)
        raw[user_index[utok]].append((stamp, lineno, item_index[itok]))

    timelines = []
    for events in raw:
        events.sort(key=lambda e: (e[0], e[1]))
        timelines.append([item for _, _, item in events])

    return InteractionLog(
        num_users=len(user_tokens),
        num_items=len(item_tokens),
        timelines=timelines,
        user_tokens=user_tokens,
        item_tokens=item_tokens,
        user_index=user_index,
        item_index=item_index,
    )


def save_log(log: InteractionLog, path: str | Path) -> None:
    """Write the canonical JSON form of a log (index maps made explicit)."""
    payload = {
        "num_users": log.num_users,
        "num_items": log.num_items,
        "user_tokens": log.user_tokens,
        "item_tokens": log.item_tokens,
        "timelines": log.timelines,
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_log(path: str | Path) -> InteractionLog:
    """Load a log saved by save_log."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read log file {path}: {exc}") from None
    return InteractionLog(
        num_users=payload["num_users"],
        num_items=payload["num_items"],
        timelines=[list(t) for t in payload["timelines"]],
        user_tokens=payload["user_tokens"],
        item_tokens=payload["item_tokens"],
    )


def tag_cold_start(log: InteractionLog, threshold: int = 5) -> ColdStartTags:
    """Tag items with <= threshold interactions in the whole log, and the
    users who touched at least one of them.

    Args:
        log: full corpus (counting is over the whole dataset, not a split).
        threshold: maximum interaction count for a cold-start item; >= 1.
    """
    if threshold < 1:
        raise ValueError(f"threshold must be >= 1, got {threshold}")
    counts = np.zeros(log.num_items, dtype=np.int64)
    for timeline in log.timelines:
        for item in timeline:
            counts[item] += 1
    cs_items = set(np.flatnonzero(counts <= threshold).tolist())
    cs_users = {
        user
        for user, timeline in enumerate(log.timelines)
        if any(item in cs_items for item in timeline)
    }
    return ColdStartTags(cs_items=cs_items, cs_users=cs_users, threshold=threshold)


def split_leave_last_out(log: InteractionLog) -> Split:
    """Hold out each user's last interaction for test and the second-to-last
    for validation.

    Users with two interactions contribute train+test only; single-interaction
    users stay train-only and are excluded from evaluation.
    """
    train_timelines = []
    validation = []
    test = []
    for user, timeline in enumerate(log.timelines):
        if len(timeline) >= 3:
            train_timelines.append(timeline[:-2])
            validation.append((user, timeline[-2]))
            test.append((user, timeline[-1]))
        elif len(timeline) == 2:
            train_timelines.append(timeline[:-1])
            test.append((user, timeline[-1]))
        else:
            train_timelines.append(list(timeline))
    train = InteractionLog(
        num_users=log.num_users,
        num_items=log.num_items,
        timelines=train_timelines,
        user_tokens=log.user_tokens,
        item_tokens=log.item_tokens,
        user_index=log.user_index,
        item_index=log.item_index,
    )
    return Split(train=train, validation=validation, test=test)


@dataclass
class EmbeddingMatrix:
    """N x d' matrix of item text embeddings, rows in internal item order."""

    values: np.ndarray  # float32, shape (N, d')

    @property
    def num_items(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def write_embedding_file(values: np.ndarray, path: str | Path) -> None:
    """Write an LMPE0001 binary: magic, u32 N, u32 d', then f32 LE row-major."""
    arr = np.ascontiguousarray(values, dtype="<f4")
    n, d = arr.shape
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<II", n, d))
        fh.write(arr.tobytes())


def read_embedding_file(path: str | Path) -> np.ndarray:
    """Read an LMPE0001 binary into a float32 array (rows in file order)."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != EMBEDDING_MAGIC:
        raise DataError(f"{path}: not an LMPE0001 embedding file")
    n, d = struct.unpack("<II", data[8:16])
    expected = 16 + 4 * n * d
    if len(data) != expected:
        raise DataError(
            f"{path}: truncated embedding file (expected {expected} bytes, got {len(data)})"
        )
    values = np.frombuffer(data, dtype="<f4", offset=16).reshape(n, d)
    return np.array(values, dtype=np.float32)


def load_embeddings(
    path: str | Path, log: InteractionLog, items_path: str | Path | None = None
) -> EmbeddingMatrix:
    """Load an LMPE0001 file and align rows to the log's internal item order.

    Args:
        path: embedding binary.
        log: corpus whose item set the file must cover.
        items_path: companion token list (line r = token of row r); defaults
            to items.tsv next to the binary.

    Raises:
        DataError: bad magic/size, unreadable companion file, or items in the
            log without an embedding row (all missing tokens are listed).
    """
    path = Path(path)
    values = read_embedding_file(path)
    if items_path is None:
        items_path = path.parent / "items.tsv"
    items_path = Path(items_path)
    if not items_path.exists():
        raise DataError(f"companion item map not found: {items_path}")
    tokens = items_path.read_text(encoding="utf-8").splitlines()
    if len(tokens) != values.shape[0]:
        raise DataError(
            f"{items_path}: {len(tokens)} tokens but {values.shape[0]} embedding rows"
        )
    row_of = {tok: r for r, tok in enumerate(tokens)}
    missing = [tok for tok in log.item_tokens if tok not in row_of]
    if missing:
        shown = ", ".join(missing[:20])
        more = "" if len(missing) <= 20 else f" (+{len(missing) - 20} more)"
        raise DataError(f"items without embeddings: {shown}{more}")
    order = np.array([row_of[tok] for tok in log.item_tokens], dtype=np.int64)
    aligned = values[order]
    if not np.all(np.isfinite(aligned)):
        raise DataError(f"{path}: non-finite embedding values")
    return EmbeddingMatrix(values=np.ascontiguousarray(aligned, dtype=np.float32))
