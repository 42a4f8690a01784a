"""Command-line wrapper around the exporter."""

from __future__ import annotations

import argparse
import sys

from .export import EncoderError, ExportError, ExportJob, export


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="clip-export", description=__doc__)
    parser.add_argument("--categories", required=True, help="engine category list file")
    parser.add_argument("--vocabulary", required=True, choices=("basic", "expanded"))
    parser.add_argument("--out", required=True, help="TARTXT1 output path")
    parser.add_argument(
        "--encoder",
        default="hash:512",
        help="'hash:<d>' for the deterministic offline encoder, else a CLIP-style model id",
    )
    args = parser.parse_args(argv)
    try:
        provenance = export(
            ExportJob(
                categories_path=args.categories,
                vocabulary=args.vocabulary,
                output_path=args.out,
                encoder=args.encoder,
            )
        )
    except (ExportError, EncoderError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(
        f"wrote {provenance['k']} x {provenance['d_text']} embeddings to {args.out} "
        f"(encoder {provenance['encoder']})"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
