"""Adapter command line: extraction and caption jobs.

    extract-images   encode an image manifest into an embedding store
    extract-texts    encode a text manifest into an embedding store
    captions         generate (or copy) class captions to a caption file
    prompt           print the caption-generation prompt for one class

Exit codes match the engine CLI: 0 success, 1 I/O failure, 2 user error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from vlmhub.errors import VlmHubError
from vlmhub.selection import build_class_caption_prompt

from .captions import DEFAULT_WORD_LIMIT, generate_class_captions, save_caption_file
from .encoders import resolve_encoder
from .extract import DEFAULT_BATCH_SIZE, ExtractionJob, extract_image_embeddings, extract_text_embeddings, read_manifest

EXIT_OK = 0
EXIT_IO = 1
EXIT_USER = 2


def _job_from_args(args, kind: str) -> ExtractionJob:
    return ExtractionJob(
        model_ref=args.checkpoint,
        manifest=read_manifest(args.manifest),
        out_path=Path(args.out),
        kind=kind,
        batch_size=args.batch_size,
        skip_bad=getattr(args, "skip_bad", False),
        overwrite=args.force,
    )


def _cmd_extract_images(args) -> int:
    encoder = resolve_encoder(args.checkpoint, cache_dir=args.cache)
    job = _job_from_args(args, kind="image")
    out = extract_image_embeddings(job, encoder)
    print(f"extract-images: {len(job.manifest)} items -> {out}", file=sys.stderr)
    return EXIT_OK


def _cmd_extract_texts(args) -> int:
    encoder = resolve_encoder(args.checkpoint, cache_dir=args.cache)
    job = _job_from_args(args, kind=args.kind)
    out = extract_text_embeddings(job, encoder)
    print(f"extract-texts: {len(job.manifest)} items -> {out}", file=sys.stderr)
    return EXIT_OK


def _cmd_captions(args) -> int:
    captions = generate_class_captions(
        args.classes.split(","),
        args.domain,
        args.task_text,
        mode=args.mode,
        fixtures_path=args.fixtures,
        cache_dir=args.cache,
        word_limit=args.word_limit,
    )
    save_caption_file(captions, args.out)
    print(f"captions: {len(captions)} classes -> {args.out}", file=sys.stderr)
    return EXIT_OK


def _cmd_prompt(args) -> int:
    print(build_class_caption_prompt(args.class_name, args.domain, args.task_text, args.word_limit))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vlmhub-adapter",
        description="Extract embeddings and captions from checkpoints into hub stores.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_img = sub.add_parser("extract-images", help="encode an image manifest")
    p_img.add_argument("--checkpoint", required=True, help="toy[:dim] or open_clip:<arch>/<pretrained>")
    p_img.add_argument("--manifest", required=True, help="TSV: <sample_id>\\t<image path>")
    p_img.add_argument("--out", required=True, help="output store directory")
    p_img.add_argument("--batch-size", dest="batch_size", type=int, default=DEFAULT_BATCH_SIZE)
    p_img.add_argument("--skip-bad", dest="skip_bad", action="store_true",
                       help="drop unreadable images instead of failing")
    p_img.add_argument("--cache", help="cache directory for remote backends")
    p_img.add_argument("--force", action="store_true")
    p_img.set_defaults(func=_cmd_extract_images)

    p_txt = sub.add_parser("extract-texts", help="encode a text manifest")
    p_txt.add_argument("--checkpoint", required=True,
                       help="toy[:dim], open_clip:<arch>/<pretrained>, or remote[:<model>]")
    p_txt.add_argument("--manifest", required=True, help="TSV: <text_id>\\t<text>")
    p_txt.add_argument("--kind", default="caption",
                       choices=["caption", "class-prompt", "task-caption"])
    p_txt.add_argument("--out", required=True)
    p_txt.add_argument("--batch-size", dest="batch_size", type=int, default=DEFAULT_BATCH_SIZE)
    p_txt.add_argument("--cache", help="cache directory for remote backends")
    p_txt.add_argument("--force", action="store_true")
    p_txt.set_defaults(func=_cmd_extract_texts)

    p_cap = sub.add_parser("captions", help="generate class captions")
    p_cap.add_argument("--classes", required=True, help="comma-separated class names")
    p_cap.add_argument("--domain", required=True, help='e.g. "natural picture"')
    p_cap.add_argument("--task-text", dest="task_text", required=True,
                       help='e.g. "image classification"')
    p_cap.add_argument("--mode", choices=["live", "fixture"], default="fixture")
    p_cap.add_argument("--fixtures", help="fixtures file for fixture mode")
    p_cap.add_argument("--cache", help="response cache directory for live mode")
    p_cap.add_argument("--word-limit", dest="word_limit", type=int, default=DEFAULT_WORD_LIMIT)
    p_cap.add_argument("--out", required=True)
    p_cap.set_defaults(func=_cmd_captions)

    p_prompt = sub.add_parser("prompt", help="print the caption prompt for one class")
    p_prompt.add_argument("--class", dest="class_name", required=True)
    p_prompt.add_argument("--domain", required=True)
    p_prompt.add_argument("--task-text", dest="task_text", required=True)
    p_prompt.add_argument("--word-limit", dest="word_limit", type=int, default=DEFAULT_WORD_LIMIT)
    p_prompt.set_defaults(func=_cmd_prompt)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VlmHubError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
