"""Full-catalog ranking metrics with overall and cold-start slices.

Every held-out (user, target) pair is ranked against the whole catalog (or
an explicit candidate subset when seen items are masked) and summarized as
NDCG@k and HR@k means over three slices: all users, users who touched at
least one cold-start item, and pairs whose target itself is cold-start.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .corpus import ColdStartTags
from .errors import NumericError

SLICE_ALL = "all"
SLICE_CS_USERS = "cs-users"
SLICE_CS_ITEMS = "cs-items"

METRIC_NDCG = "ndcg"
METRIC_HR = "hr"

CSV_HEADER = "model,slice,metric,k,value"


@dataclass(frozen=True)
class RankOutcome:
    """One evaluated pair: 1-based rank of the target among candidates."""

    user: int
    target: int
    rank: int


@dataclass
class EvalReport:
    """Rows of (model, slice, metric, k, value)."""

    rows: list[tuple[str, str, str, int, float]]

    def value(self, slice_name: str, metric: str, k: int) -> float:
        for _, s, m, kk, v in self.rows:
            if s == slice_name and m == metric and kk == k:
                return v
        raise KeyError(f"no row for ({slice_name}, {metric}, {k})")

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for model, s, m, k, v in self.rows:
            lines.append(f"{model},{s},{m},{k},{v:.6f}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())


def rank_target(
    scores: np.ndarray, target: int, candidates: np.ndarray | None = None
) -> int:
    """1-based rank by descending score; equal scores break by lower index.

    `candidates` is an optional boolean mask restricting the comparison set;
    the target always competes regardless of the mask.

    Raises:
        NumericError: any candidate score (or the target's) is not finite.
    """
    n = scores.shape[0]
    if not (0 <= target < n):
        raise IndexError(f"target {target} out of range for {n} items")
    if candidates is None:
        considered = scores
        indices = None
    else:
        mask = np.asarray(candidates, dtype=bool).copy()
        mask[target] = True
        considered = scores[mask]
        indices = np.flatnonzero(mask)
    if not np.all(np.isfinite(considered)):
        raise NumericError("non-finite score among ranked candidates")
    t = scores[target]
    if indices is None:
        greater = int(np.count_nonzero(considered > t))
        equal_before = int(np.count_nonzero(considered[:target] == t))
    else:
        greater = int(np.count_nonzero(considered > t))
        equal_before = int(
            np.count_nonzero((considered == t) & (indices < target))
        )
    return 1 + greater + equal_before


def ndcg_at(rank: int, k: int) -> float:
    """1/log2(rank+1) inside the cutoff, 0 outside; ideal DCG is 1."""
    if rank < 1 or k < 1:
        raise ValueError("rank and k must be >= 1")
    return 1.0 / np.log2(rank + 1) if rank <= k else 0.0


def hr_at(rank: int, k: int) -> int:
    """1 if the target made the top-k list (inclusive), else 0."""
    if rank < 1 or k < 1:
        raise ValueError("rank and k must be >= 1")
    return 1 if rank <= k else 0


def compute_ranks(
    scorer: Callable[[int], np.ndarray],
    pairs: Sequence[tuple[int, int]],
    masked_items: Callable[[int], Iterable[int]] | None = None,
    num_items: int | None = None,
) -> list[RankOutcome]:
    """Rank each (user, target) pair. `scorer(user)` returns catalog scores.

    `masked_items(user)` optionally yields items to exclude from the
    candidate set (the target stays in regardless).
    """
    outcomes = []
    for user, target in pairs:
        scores = scorer(user)
        candidates = None
        if masked_items is not None:
            n = num_items if num_items is not None else scores.shape[0]
            candidates = np.ones(n, dtype=bool)
            for item in masked_items(user):
                candidates[item] = False
        outcomes.append(
            RankOutcome(user=user, target=target, rank=rank_target(scores, target, candidates))
        )
    return outcomes


def summarize(
    outcomes: Sequence[RankOutcome],
    tags: ColdStartTags,
    ks: Sequence[int] = (10, 20, 40),
    model_tag: str = "model",
) -> EvalReport:
    """Slice means of NDCG@k and HR@k. Empty input warns and yields no rows."""
    if not outcomes:
        warnings.warn("empty evaluation set; report has no rows", stacklevel=2)
        return EvalReport(rows=[])
    slices = {
        SLICE_ALL: list(outcomes),
        SLICE_CS_USERS: [o for o in outcomes if o.user in tags.cs_users],
        SLICE_CS_ITEMS: [o for o in outcomes if o.target in tags.cs_items],
    }
    rows = []
    for slice_name, subset in slices.items():
        if not subset:
            continue  # nothing to average; omit the slice
        for metric in (METRIC_NDCG, METRIC_HR):
            fn = ndcg_at if metric == METRIC_NDCG else hr_at
            for k in ks:
                value = float(np.mean([fn(o.rank, k) for o in subset]))
                rows.append((model_tag, slice_name, metric, int(k), value))
    return EvalReport(rows=rows)


def evaluate(
    scorer: Callable[[int], np.ndarray],
    pairs: Sequence[tuple[int, int]],
    tags: ColdStartTags,
    ks: Sequence[int] = (10, 20, 40),
    model_tag: str = "model",
    masked_items: Callable[[int], Iterable[int]] | None = None,
    num_items: int | None = None,
) -> EvalReport:
    """Rank all pairs then aggregate per slice, metric, and cutoff."""
    outcomes = compute_ranks(scorer, pairs, masked_items, num_items)
    return summarize(outcomes, tags, ks=ks, model_tag=model_tag)
