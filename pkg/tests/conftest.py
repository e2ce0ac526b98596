"""Shared test helpers: finite-difference gradients and tiny corpora."""

from __future__ import annotations

from typing import Callable

import numpy as np
import pytest

from lmprior.corpus import InteractionLog


def numeric_gradient(
    f: Callable[[], float], arrays: dict[str, np.ndarray], step: float = 1e-5
) -> dict[str, np.ndarray]:
    """Central finite differences of f() w.r.t. every entry of every array.

    Arrays are perturbed in place and restored, so f may read them directly.
    """
    out = {}
    for name, arr in arrays.items():
        grad = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            fp = f()
            flat[idx] = orig - step
            fm = f()
            flat[idx] = orig
            gflat[idx] = (fp - fm) / (2.0 * step)
        out[name] = grad
    return out


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst-case entry error scaled by the gradient magnitude (floored at 1)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(1.0, float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))))
    return float(np.max(np.abs(analytic - numeric))) / scale


def assert_gradients_close(
    analytic: dict[str, np.ndarray],
    numeric: dict[str, np.ndarray],
    tol: float = 1e-5,
) -> None:
    for name in numeric:
        err = max_relative_error(analytic[name], numeric[name])
        assert err <= tol, f"{name}: relative error {err:.3e} > {tol:.0e}"


def make_log(timelines: list[list[int]], num_items: int | None = None) -> InteractionLog:
    """Build an in-memory log straight from internal-id timelines."""
    if num_items is None:
        num_items = 1 + max((i for tl in timelines for i in tl), default=-1)
    return InteractionLog(
        num_users=len(timelines),
        num_items=num_items,
        timelines=[list(t) for t in timelines],
        user_tokens=[f"u{j}" for j in range(len(timelines))],
        item_tokens=[f"i{i}" for i in range(num_items)],
    )


@pytest.fixture
def tiny_log() -> InteractionLog:
    return make_log([[0, 1, 2, 3], [1, 2, 0], [3, 0]], num_items=4)
