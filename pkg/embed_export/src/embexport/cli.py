"""Command line: export-images and export-text."""

from __future__ import annotations

import argparse
import sys

from .encoders import make_encoder
from .errors import EmbedExportError
from .export import export_images, export_text
from .manifest import load_manifest


def cmd_images(args) -> int:
    manifest = load_manifest(args.manifest)
    out = args.out or manifest.output
    if not out:
        raise EmbedExportError("no output path (--out or manifest 'output')")
    encoder = make_encoder(args.encoder)
    n = export_images(manifest, encoder, out)
    sys.stdout.write(f"wrote {n} image embeddings ({encoder.name}) to {out}\n")
    return 0


def cmd_text(args) -> int:
    if args.prompts == "-":
        prompts = [line.rstrip("\n") for line in sys.stdin if line.strip()]
    else:
        with open(args.prompts) as f:
            prompts = [line.rstrip("\n") for line in f if line.strip()]
    encoder = make_encoder(args.encoder)
    n = export_text(prompts, encoder, args.out)
    sys.stdout.write(f"wrote {n} text embeddings ({encoder.name}) to {args.out}\n")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="embed-export")
    parser.add_argument(
        "--encoder", choices=["clip", "fallback"], default="clip",
        help="encoder backend; 'fallback' needs no downloaded weights",
    )
    sub = parser.add_subparsers(required=True)

    p = sub.add_parser("export-images", help="encode manifest images to an EMB1 file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_images)

    p = sub.add_parser("export-text", help="encode prompts (one per line) to an EMB1 file")
    p.add_argument("--prompts", required=True, help="prompt file, or '-' for stdin")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_text)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EmbedExportError as e:
        sys.stderr.write(f"error: {type(e).__name__}: {e}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
