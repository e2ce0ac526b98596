"""Metadata TSV in, aligned LMPE0001 embeddings plus token list out."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .formats import read_embedding_file, write_embedding_file

DEFAULT_MODEL = "sentence-transformers/all-MiniLM-L6-v2"


@dataclass
class MetadataRow:
    """One catalog entry: unique item token plus its free-form text."""

    token: str
    text: str


def _listed(values: list[str], limit: int = 20) -> str:
    shown = ", ".join(values[:limit])
    more = "" if len(values) <= limit else f" (+{len(values) - limit} more)"
    return shown + more


def read_metadata(path: str | Path) -> list[MetadataRow]:
    """Parse `token<TAB>text` lines; trimming whitespace is the only cleanup.

    Raises:
        DataError: missing file, empty token, duplicate token, or rows whose
            text is empty after trimming (all offending tokens listed).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"metadata file not found: {path}")
    rows: list[MetadataRow] = []
    bad_lines: list[str] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        token, _, text = line.partition("\t")
        token = token.strip()
        if not token:
            bad_lines.append(str(lineno))
            continue
        rows.append(MetadataRow(token=token, text=text.strip()))
    if bad_lines:
        raise DataError(f"empty item token on line(s): {_listed(bad_lines)}")
    seen: set[str] = set()
    dupes = [r.token for r in rows if r.token in seen or seen.add(r.token)]
    if dupes:
        raise DataError(f"duplicate item tokens: {_listed(sorted(set(dupes)))}")
    empty = [r.token for r in rows if not r.text]
    if empty:
        raise DataError(f"rows with empty text: {_listed(empty)}")
    if not rows:
        raise DataError(f"{path}: no metadata rows")
    return rows


def extract(rows: list[MetadataRow], encoder, batch_size: int = 64) -> np.ndarray:
    """Encode every row's text, preserving row order.

    Raises:
        DataError: encoder output width disagrees with its declared d'.
    """
    values = encoder.encode([r.text for r in rows], batch_size=batch_size)
    values = np.asarray(values, dtype=np.float32)
    if values.shape != (len(rows), encoder.dim):
        raise DataError(
            f"encoder returned shape {values.shape}, "
            f"expected ({len(rows)}, {encoder.dim})"
        )
    return values


def run_extract(
    input_path: str | Path,
    output_path: str | Path,
    items_path: str | Path,
    encoder,
    batch_size: int = 64,
) -> dict:
    """Full pipeline: parse, encode, write, then re-read and validate.

    Writes three files: the LMPE0001 binary, the companion token list
    (line r names row r), and model.txt recording the encoder next to the
    binary.

    Raises:
        DataError: validation of the written file fails (bad shape or
            non-finite values).
    """
    rows = read_metadata(input_path)
    values = extract(rows, encoder, batch_size=batch_size)

    output_path = Path(output_path)
    items_path = Path(items_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    items_path.parent.mkdir(parents=True, exist_ok=True)
    write_embedding_file(values, output_path)
    items_path.write_text("".join(r.token + "\n" for r in rows), encoding="utf-8")
    (output_path.parent / "model.txt").write_text(
        f"model: {encoder.name}\ndim: {encoder.dim}\nrows: {len(rows)}\n",
        encoding="utf-8",
    )

    back = read_embedding_file(output_path)
    if back.shape != (len(rows), encoder.dim):
        raise DataError(
            f"{output_path}: wrote shape {back.shape}, "
            f"expected ({len(rows)}, {encoder.dim})"
        )
    if not np.all(np.isfinite(back)):
        raise DataError(f"{output_path}: non-finite embedding values")
    return {
        "rows": len(rows),
        "dim": encoder.dim,
        "model": encoder.name,
        "output": str(output_path),
        "items": str(items_path),
    }
