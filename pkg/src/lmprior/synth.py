"""Clustered synthetic benchmark with metadata-aligned tastes and cold items.

The generator draws anisotropic Gaussian item clusters whose per-cluster
scales differ by an order of magnitude, so a single global kernel bandwidth
is miscalibrated for most clusters while per-item local covariances adapt.
Users prefer one or two clusters and sample items near a per-cluster anchor
under that cluster's own metric, so taste locality follows the embedding
geometry. A small cold subset appears only as final interactions of users
whose anchors sit nearest the cold item, which makes those items invisible
to interaction-only training but recoverable through the similarity graph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import write_embedding_file
from .errors import UsageError


@dataclass
class SynthData:
    """Generated benchmark in emission order (item index = embedding row)."""

    x: np.ndarray
    timelines: list[list[int]]
    cluster_of: np.ndarray
    cold_items: list[int]
    cs_users: list[int]
    config: dict = field(default_factory=dict)


def _cluster_frames(
    rng: np.random.Generator,
    num_clusters: int,
    dim: int,
    scale_min: float,
    scale_max: float,
    axis_decay: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rotations, per-axis scales, and overall scales for each cluster."""
    overall = np.geomspace(scale_min, scale_max, num_clusters)
    profile = np.geomspace(1.0, axis_decay, dim)
    rotations = np.empty((num_clusters, dim, dim))
    axes = np.empty((num_clusters, dim))
    for c in range(num_clusters):
        q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        rotations[c] = q
        axes[c] = overall[c] * profile
    return rotations, axes, overall


def _mahalanobis_sq(
    points: np.ndarray, center: np.ndarray, rotation: np.ndarray, axes: np.ndarray
) -> np.ndarray:
    """Squared distances under the cluster metric rotation diag(axes^2) rot^T."""
    y = (points - center) @ rotation / axes
    return np.einsum("ij,ij->i", y, y)


def generate_benchmark(
    num_users: int = 2000,
    num_items: int = 1000,
    num_clusters: int = 10,
    dim: int = 32,
    cold_frac: float = 0.05,
    cold_offset: float = 0.15,
    noise: float = 0.0,
    seed: int = 42,
    threshold: int = 5,
    t_min: int = 12,
    t_max: int = 24,
    neighborhood: int = 10,
    pick_decay: float = 0.75,
    two_cluster_prob: float = 0.3,
    center_scale: float = 8.0,
    scale_min: float = 0.2,
    scale_max: float = 2.0,
    axis_decay: float = 0.05,
    min_warm_count: int = 6,
) -> SynthData:
    """Draw items, users, timelines, and the cold subset deterministically.

    Raises:
        UsageError: fewer than 2 clusters, or a cold fraction that leaves a
            cluster without warm items or a cold item without consumers.
    """
    if num_clusters < 2:
        raise UsageError("need at least 2 clusters")
    if not (0.0 <= cold_frac < 1.0):
        raise UsageError("cold fraction must be in [0, 1)")
    if min_warm_count <= threshold:
        min_warm_count = threshold + 1  # warm items must exceed the CS threshold
    rng = np.random.default_rng(seed)

    centers = rng.normal(size=(num_clusters, dim)) * center_scale
    rotations, axes, _ = _cluster_frames(
        rng, num_clusters, dim, scale_min, scale_max, axis_decay
    )
    cluster_of = np.arange(num_items) % num_clusters
    x = np.empty((num_items, dim))
    for i in range(num_items):
        c = cluster_of[i]
        eta = rng.normal(size=dim)
        x[i] = centers[c] + rotations[c] @ (axes[c] * eta)
    if noise > 0:
        x += noise * rng.normal(size=x.shape)

    # Stratify the cold subset across clusters, keeping warm anchors everywhere.
    n_cold = int(round(cold_frac * num_items))
    members = [np.flatnonzero(cluster_of == c) for c in range(num_clusters)]
    quotas = [n_cold // num_clusters] * num_clusters
    for c in range(n_cold % num_clusters):
        quotas[c] += 1
    cold_items: list[int] = []
    for c in range(num_clusters):
        if quotas[c] >= len(members[c]):
            raise UsageError("cold fraction infeasible: a cluster has no warm items")
        if quotas[c]:
            picked = rng.choice(members[c], size=quotas[c], replace=False)
            cold_items.extend(int(i) for i in np.sort(picked))
    cold_set = set(cold_items)
    warm_members = [
        np.array([i for i in members[c] if i not in cold_set]) for c in range(num_clusters)
    ]

    # Each cold item is a small perturbation of a warm parent in its own
    # cluster: a new catalog entry resembles an existing sibling.
    cold_parent: dict[int, int] = {}
    for i in cold_items:
        c = int(cluster_of[i])
        parent = int(rng.choice(warm_members[c]))
        eta = rng.normal(size=dim)
        x[i] = x[parent] + rotations[c] @ (cold_offset * axes[c] * eta)
        cold_parent[i] = parent

    # Pass 1: cluster preferences only, so cold consumers can be booked
    # before any timeline is drawn.
    prefs: list[np.ndarray] = []
    pref_w: list[np.ndarray] = []
    users_by_cluster: list[list[int]] = [[] for _ in range(num_clusters)]
    for user in range(num_users):
        n_pref = 2 if (num_clusters >= 2 and rng.random() < two_cluster_prob) else 1
        chosen = rng.choice(num_clusters, size=n_pref, replace=False)
        weights = np.array([0.7, 0.3][:n_pref] if n_pref == 2 else [1.0])
        prefs.append(chosen.astype(np.int64))
        pref_w.append(weights / weights.sum())
        for c in chosen:
            users_by_cluster[int(c)].append(user)

    # Pass 2: book consumers for each cold item. A consumer's taste anchor in
    # that cluster is forced to the cold item's parent, so the people who buy
    # the new item are the ones who love its closest sibling. Only users whose
    # dominant preference is that cluster are booked, keeping the anchor the
    # heaviest item in their timeline.
    forced_anchor: list[dict[int, int]] = [{} for _ in range(num_users)]
    consumes: list[list[int]] = [[] for _ in range(num_users)]
    cs_users: list[int] = []
    for i in cold_items:
        c = int(cluster_of[i])
        gateway = cold_parent[i]
        free = [
            u for u in users_by_cluster[c]
            if not consumes[u] and int(prefs[u][0]) == c
        ]
        if not free:
            raise UsageError("cold fraction infeasible: no free consumers left")
        n_occ = min(int(rng.integers(1, threshold + 1)), len(free))
        picked = rng.choice(len(free), size=n_occ, replace=False)
        for idx in picked:
            u = free[int(idx)]
            forced_anchor[u][c] = gateway
            consumes[u].append(i)
            cs_users.append(u)

    # Pass 3: timelines. Items come from the anchor's Mahalanobis
    # neighborhood of warm items with rank-decayed pick weights, so the
    # anchor itself is each user's most-consumed item.
    timelines: list[list[int]] = []
    for user in range(num_users):
        chosen = prefs[user]
        hood: dict[int, np.ndarray] = {}
        hood_p: dict[int, np.ndarray] = {}
        for c in chosen:
            c = int(c)
            warm = warm_members[c]
            a = forced_anchor[user].get(c)
            if a is None:
                a = int(rng.choice(warm))
            d2 = _mahalanobis_sq(x[warm], x[a], rotations[c], axes[c])
            take = min(neighborhood, len(warm))
            hood[c] = warm[np.argsort(d2, kind="stable")[:take]]
            p = pick_decay ** np.arange(take)
            hood_p[c] = p / p.sum()
        t = int(rng.integers(t_min, t_max + 1))
        picks_c = rng.choice(len(chosen), size=t, p=pref_w[user])
        timelines.append([
            int(rng.choice(hood[int(chosen[pc])], p=hood_p[int(chosen[pc])]))
            for pc in picks_c
        ])

    # Pass 4: every warm item must clear the cold-start threshold.
    counts = np.zeros(num_items, dtype=np.int64)
    for tl in timelines:
        for i in tl:
            counts[i] += 1
    for c in range(num_clusters):
        pool = users_by_cluster[c] if users_by_cluster[c] else list(range(num_users))
        for i in warm_members[c]:
            deficit = min_warm_count - int(counts[i])
            for _ in range(deficit):
                user = int(pool[int(rng.integers(0, len(pool)))])
                pos = int(rng.integers(0, len(timelines[user]) + 1))
                timelines[user].insert(pos, int(i))
                counts[i] += 1

    # Pass 5: cold items close their consumers' timelines, so a leave-last-out
    # split holds every cold occurrence out of training.
    for user in range(num_users):
        for i in consumes[user]:
            timelines[user].append(i)

    config = dict(
        num_users=num_users, num_items=num_items, num_clusters=num_clusters,
        dim=dim, cold_frac=cold_frac, cold_offset=cold_offset,
        noise=noise, seed=seed, threshold=threshold,
        t_min=t_min, t_max=t_max, neighborhood=neighborhood,
        pick_decay=pick_decay,
        two_cluster_prob=two_cluster_prob, center_scale=center_scale,
        scale_min=scale_min, scale_max=scale_max, axis_decay=axis_decay,
        min_warm_count=min_warm_count,
    )
    return SynthData(
        x=x, timelines=timelines, cluster_of=cluster_of,
        cold_items=cold_items, cs_users=sorted(cs_users), config=config,
    )


def item_token(i: int) -> str:
    return f"i{i}"


def user_token(j: int) -> str:
    return f"u{j}"


def write_benchmark(data: SynthData, out_dir: str | Path) -> dict[str, Path]:
    """Emit interactions.tsv, embeddings.bin, items.tsv, and truth.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "interactions": out / "interactions.tsv",
        "embeddings": out / "embeddings.bin",
        "items": out / "items.tsv",
        "truth": out / "truth.json",
    }
    with open(paths["interactions"], "w") as fh:
        for user, tl in enumerate(data.timelines):
            for t, item in enumerate(tl, start=1):
                fh.write(f"{user_token(user)}\t{item_token(item)}\t{t}\n")
    write_embedding_file(data.x, paths["embeddings"])
    with open(paths["items"], "w") as fh:
        for i in range(data.x.shape[0]):
            fh.write(item_token(i) + "\n")
    truth = {
        "config": data.config,
        "cold_item_tokens": [item_token(i) for i in data.cold_items],
        "cs_user_tokens": [user_token(u) for u in data.cs_users],
        "cluster_of": {item_token(i): int(c) for i, c in enumerate(data.cluster_of)},
    }
    paths["truth"].write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    return paths
