"""First-order optimizers shared by both recommenders.

Plain SGD and bias-corrected Adam over named parameter dicts. Updates are
dense and in-place; with identical seeds and data order the parameter
trajectory is bit-reproducible.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError


class Optimizer:
    """SGD or Adam over a dict of parameter arrays.

    Adam follows the standard bias-corrected update
        m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2,
        p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
    with defaults b1=0.9, b2=0.999, eps=1e-8.
    """

    def __init__(
        self,
        kind: str = "adam",
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        clip: float | None = None,
    ) -> None:
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {kind!r}")
        if lr <= 0.0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.kind = kind
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip = clip
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Apply one update to every parameter tensor, in place.

        Raises:
            ValueError: a gradient is missing or its shape mismatches.
            NumericError: a gradient contains non-finite values (no update
                is applied).
        """
        for name, p in params.items():
            if name not in grads:
                raise ValueError(f"missing gradient for parameter {name!r}")
            if grads[name].shape != p.shape:
                raise ValueError(
                    f"gradient shape {grads[name].shape} != parameter shape "
                    f"{p.shape} for {name!r}"
                )
        for name in params:
            if not np.all(np.isfinite(grads[name])):
                raise NumericError(f"non-finite gradient for parameter {name!r}")

        self.step_count += 1
        t = self.step_count
        for name, p in params.items():
            g = grads[name]
            if self.clip is not None:
                norm = float(np.sqrt(np.sum(g * g)))
                if norm > self.clip:
                    g = g * (self.clip / norm)
            if self.kind == "sgd":
                p -= self.lr * g
                continue
            if name not in self._m:
                self._m[name] = np.zeros_like(p)
                self._v[name] = np.zeros_like(p)
            m, v = self._m[name], self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
