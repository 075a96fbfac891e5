"""Command-line front end mirroring ExportJob field for field."""

from __future__ import annotations

import argparse
import sys

from probecut.tensors import CONFIG_TAGS, POOLING_MODES

from actexport import __version__
from actexport.export import ExportError, ExportJob, export
from actexport.loading import ModelLoadError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="actexport",
        description="Export pooled per-layer transformer activations as an LPT tensor set.",
    )
    parser.add_argument("--version", action="version", version=f"actexport {__version__}")
    parser.add_argument("--model", required=True, help="model hub name or local directory")
    parser.add_argument("--manifest", required=True, help="sample manifest (jsonl); token counts are written back")
    parser.add_argument("--out", required=True, help="output directory for LPT files and activations.json")
    parser.add_argument("--max-tokens", type=int, default=512, help="skip samples longer than this (default 512)")
    parser.add_argument("--pool", choices=POOLING_MODES, default="mean")
    parser.add_argument("--config-tag", choices=CONFIG_TAGS, default="baseline")
    parser.add_argument("--prune-plan", default=None, help="plan file for the pruned config tags")
    parser.add_argument("--batch", type=int, default=8, help="samples per forward pass (default 8)")
    parser.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = ExportJob(
            model_id=args.model,
            manifest_path=args.manifest,
            out_dir=args.out,
            max_tokens=args.max_tokens,
            pooling=args.pool,
            config_tag=args.config_tag,
            prune_plan_path=args.prune_plan,
            batch_size=args.batch,
        )
        result = export(job)
    except (ExportError, ModelLoadError, OSError, ValueError, KeyError) as exc:
        # underlying loaders can raise multi-line messages; keep one line
        print("error: " + " ".join(str(exc).split()), file=sys.stderr)
        return 1
    if not args.quiet:
        for sid, count in result.skipped:
            print(f"skipped {sid}: {count} tokens > {args.max_tokens}")
        print(
            f"wrote {len(result.manifest.tensor_paths)} layer tensors for "
            f"{len(result.sample_ids)} samples to {args.out}"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
