"""`attn_hook` command line entry point."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .dump import HookConfig, HookError, dump_attention


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="attn_hook",
        description="Capture per-layer VLM attention into ATTN1 files",
    )
    p.add_argument("--model", required=True,
                   help="model id or local checkpoint directory")
    p.add_argument("--manifest", required=True, type=Path,
                   help="sample manifest JSONL")
    p.add_argument("--condition", required=True)
    p.add_argument("--out", required=True, type=Path, dest="out_dir")
    p.add_argument("--assets", required=True, type=Path, dest="assets_dir",
                   help="evidence root: <dir>/<doc_id>/p<page>.{png,txt,tex}")
    p.add_argument("--device", default="cpu")
    p.add_argument("--layers", default=None,
                   help="comma-separated layer indices (default: all)")
    p.add_argument("--max-new-tokens", type=int, default=16)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        layers = None
        if args.layers:
            layers = tuple(int(v) for v in args.layers.split(","))
        cfg = HookConfig(
            model=args.model,
            manifest=args.manifest,
            condition=args.condition,
            out_dir=args.out_dir,
            assets_dir=args.assets_dir,
            device=args.device,
            layers=layers,
            max_new_tokens=args.max_new_tokens,
        )
        manifest = dump_attention(cfg)
    except (HookError, OSError, ValueError) as exc:
        print(f"attn_hook: {exc}", file=sys.stderr)
        return 1
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
