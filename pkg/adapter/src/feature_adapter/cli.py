"""Command-line entry points for the feature adapter."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .encoder import CrossModalEncoder, make_test_encoder
from .errors import ExportError
from .export import export_features


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="feature-adapter",
        description="Run a frozen cross-modal encoder over region features "
                    "and questions, writing MKF-1 interchange files.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="encode a source directory to MKF-1")
    p.add_argument("--source", required=True,
                   help="directory with annotations.jsonl and regions/*.npz")
    p.add_argument("--encoder", required=True,
                   help="encoder directory or hub identifier")
    p.add_argument("--device", default="cpu")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("make-test-encoder",
                       help="save a tiny seeded encoder for offline smoke runs")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_make_test_encoder)

    return parser


def cmd_export(args) -> int:
    encoder = CrossModalEncoder.load(args.encoder, device=args.device)
    written = export_features(args.source, encoder, args.out)
    print(f"exported {written[0]} (+ blob)")
    return 0


def cmd_make_test_encoder(args) -> int:
    path = make_test_encoder(Path(args.out), seed=args.seed)
    print(f"wrote test encoder to {path}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ExportError as exc:
        print(f"error:export: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
