"""Text encoders behind one tiny protocol: encode(texts, batch_size) -> (n, d).

Two families: `hash:<dim>` is a dependency-free deterministic stand-in for
tests and dry runs; any other name resolves through sentence-transformers.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import EnvironmentFailure, UsageError


class HashEncoder:
    """Deterministic pseudo-embeddings seeded by the SHA-256 of each text.

    Identical texts always map to identical rows, on any platform, with no
    model download; useful for format tests and pipeline dry runs.
    """

    def __init__(self, dim: int):
        if dim <= 0:
            raise UsageError(f"hash encoder dimension must be positive, got {dim}")
        self.dim = dim
        self.name = f"hash:{dim}"

    def encode(self, texts: list[str], batch_size: int) -> np.ndarray:
        out = np.empty((len(texts), self.dim), dtype=np.float32)
        for r, text in enumerate(texts):
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            out[r] = rng.standard_normal(self.dim, dtype=np.float32)
        return out


class SentenceEncoder:
    """sentence-transformers adapter; d' is read off the loaded model."""

    def __init__(self, name: str):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise EnvironmentFailure(
                f"sentence-transformers is not installed: {exc}"
            ) from None
        try:
            self._model = SentenceTransformer(name)
        except Exception as exc:
            raise EnvironmentFailure(f"cannot load encoder {name!r}: {exc}") from None
        self.dim = int(self._model.get_sentence_embedding_dimension())
        self.name = name

    def encode(self, texts: list[str], batch_size: int) -> np.ndarray:
        values = self._model.encode(
            texts,
            batch_size=batch_size,
            convert_to_numpy=True,
            show_progress_bar=False,
        )
        return np.asarray(values, dtype=np.float32)


def resolve_encoder(name: str):
    """Map a model name to an encoder instance.

    Raises:
        UsageError: malformed `hash:<dim>` spec.
        EnvironmentFailure: missing dependency or unloadable model.
    """
    if name.startswith("hash:"):
        spec = name.split(":", 1)[1]
        try:
            dim = int(spec)
        except ValueError:
            raise UsageError(f"bad hash encoder spec {name!r}; want hash:<dim>")
        return HashEncoder(dim)
    return SentenceEncoder(name)
