"""embed-export command line entry point."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .export import ExportError, ExportJob, export_embeddings


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Export image/text embeddings from a dataset manifest as EMB1 files.")
    parser.add_argument("--version", action="version", version=f"embed-export {__version__}")
    parser.add_argument("--manifest", required=True, help="dataset manifest JSON")
    parser.add_argument("--model", default="openai/clip-vit-large-patch14",
                        help="Hugging Face model id or local path")
    parser.add_argument("--out-img", required=True, help="output image EMB1 file")
    parser.add_argument("--out-txt", required=True, help="output text EMB1 file")
    parser.add_argument("--dummy", action="store_true",
                        help="hash-seeded pseudo-embeddings, no model weights needed")
    parser.add_argument("--dim", type=int, default=32,
                        help="embedding dimension in --dummy mode")
    parser.add_argument("--batch", type=int, default=16, help="inference batch size")
    parser.add_argument("--device", default="cpu")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    job = ExportJob(manifest=Path(args.manifest), out_img=Path(args.out_img),
                    out_txt=Path(args.out_txt), model=args.model, dummy=args.dummy,
                    dim=args.dim, batch_size=args.batch, device=args.device)
    try:
        out_img, out_txt = export_embeddings(job)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(out_img)
    print(out_txt)
    return 0


if __name__ == "__main__":
    sys.exit(main())
