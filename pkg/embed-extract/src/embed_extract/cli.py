"""Command-line entry point: one shot from metadata TSV to embedding binary."""

from __future__ import annotations

import argparse
import sys

from .encoders import resolve_encoder
from .errors import ExtractError
from .extract import DEFAULT_MODEL, run_extract


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="embed-extract",
        description="Encode item metadata text into an LMPE0001 embedding file.",
        epilog="Exit codes: 0 ok, 2 usage, 3 data, 5 environment (encoder).",
    )
    p.add_argument("--input", required=True, help="metadata TSV: token<TAB>text")
    p.add_argument("--output", required=True, help="LMPE0001 binary to write")
    p.add_argument("--items", required=True, help="companion token list to write")
    p.add_argument(
        "--model",
        default=DEFAULT_MODEL,
        help=f"encoder name, or hash:<dim> for a deterministic stand-in "
        f"(default: {DEFAULT_MODEL})",
    )
    p.add_argument("--batch", type=int, default=64, help="encoder batch size")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.batch <= 0:
            from .errors import UsageError

            raise UsageError(f"batch size must be positive, got {args.batch}")
        encoder = resolve_encoder(args.model)
        summary = run_extract(
            args.input, args.output, args.items, encoder, batch_size=args.batch
        )
    except ExtractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(f"model: {summary['model']}")
    print(f"rows: {summary['rows']}")
    print(f"dim: {summary['dim']}")
    print(f"embeddings: {summary['output']}")
    print(f"items: {summary['items']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
