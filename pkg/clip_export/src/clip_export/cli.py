"""Command-line exporter: text embeddings and dense image features."""

from __future__ import annotations

import argparse
import sys

from .encoders import EncoderError
from .export import ExportError, ExportManifest, export_image_features, export_text_embeddings, read_phrase_list


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="clip-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("text", help="export phrase embeddings to an embedding-table JSON")
    p.add_argument("--phrases", required=True, help="UTF-8 file, one phrase per line")
    p.add_argument("--out", required=True)
    p.add_argument("--model", default="hashed", help="'hashed' or 'clip:<checkpoint>'")
    p.add_argument("--dim", type=int, default=512)

    p = sub.add_parser("image", help="export dense per-pixel features to LEGF")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default="hashed")
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--patch-size", type=int, default=16)

    args = parser.parse_args(argv)
    try:
        if args.command == "text":
            manifest = ExportManifest(model=args.model, output_path=args.out, dim=args.dim)
            export_text_embeddings(read_phrase_list(args.phrases), manifest)
        else:
            manifest = ExportManifest(
                model=args.model, output_path=args.out, dim=args.dim,
                patch_size=args.patch_size,
            )
            export_image_features(args.image, manifest)
    except (ExportError, EncoderError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    raise SystemExit(run())
