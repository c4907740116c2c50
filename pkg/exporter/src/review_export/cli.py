"""Command line entry point: export-embeddings."""

import argparse
import os
import sys

from .encode import POOLINGS
from .export import export


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="export-embeddings",
        description="Encode each review in a canonical interaction file and "
                    "write raw embeddings plus a manifest sidecar.",
    )
    parser.add_argument("--canonical", required=True, help="canonical interaction file")
    parser.add_argument("--out", required=True, help="output embedding file")
    parser.add_argument("--encoder", required=True,
                        help="pretrained model name or local directory")
    parser.add_argument("--pooling", default="mean", choices=POOLINGS)
    parser.add_argument("--batch", type=int, default=64, help="encoding batch size")
    args = parser.parse_args(argv)

    os.environ.setdefault("HF_HUB_DISABLE_PROGRESS_BARS", "1")
    os.environ.setdefault("TRANSFORMERS_VERBOSITY", "error")
    try:
        manifest = export(args.canonical, args.out, args.encoder,
                          pooling=args.pooling, batch_size=args.batch)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {manifest.row_count} rows of dim {manifest.raw_dim} to {args.out}")
    return 0


def entry() -> None:
    sys.exit(main())
