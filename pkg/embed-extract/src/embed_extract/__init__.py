"""Offline item-metadata text encoder emitting LMPE0001 embedding files.

Reads `token<TAB>text` rows, encodes the text with a pretrained sentence
encoder (or a deterministic hash stand-in), and writes the binary embedding
matrix plus its companion token list, row-aligned, for downstream
similarity-graph construction.
"""

from .encoders import HashEncoder, SentenceEncoder, resolve_encoder
from .errors import DataError, EnvironmentFailure, ExtractError, UsageError
from .extract import DEFAULT_MODEL, MetadataRow, extract, read_metadata, run_extract
from .formats import EMBEDDING_MAGIC, read_embedding_file, write_embedding_file

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_MODEL",
    "DataError",
    "EMBEDDING_MAGIC",
    "EnvironmentFailure",
    "ExtractError",
    "HashEncoder",
    "MetadataRow",
    "SentenceEncoder",
    "UsageError",
    "__version__",
    "extract",
    "read_embedding_file",
    "read_metadata",
    "resolve_encoder",
    "run_extract",
    "write_embedding_file",
]
