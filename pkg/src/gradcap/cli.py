"""Command-line entry point.

    gradcap make-toy-data --output-dir data/toy
    gradcap train --preset toy --dataset data/toy/train.json --output-dir runs/toy
    gradcap caption --checkpoint runs/toy/model.ckpt --image data/toy/images/000000.png
    gradcap evaluate --checkpoint runs/toy/model.ckpt --dataset data/toy/test.json
    gradcap visualize-attention --checkpoint runs/toy/model.ckpt --image img.png --words circle

Training flags mirror the ``RunConfig`` fields. ``--config FILE`` reads
``key = value`` lines first; explicit flags win over the file. The
``GRADCAP_OUTPUT_DIR`` environment variable overrides the output directory.
Exit status is 0 on success, 1 for invalid arguments or configuration and 2
for failures while running.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import typing
from pathlib import Path

from .checkpoint import CheckpointError
from .corpus import load_coco_format, read_image
from .pipeline import (OUTPUT_DIR_ENV, ConfigError, RunConfig, caption_image, evaluate, load_model,
                       train, visualize_attention, write_report)
from .toy import ToyConfig, generate_toy_dataset, toy_mapping, write_toy_dataset

logger = logging.getLogger("gradcap")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
PRESETS = {"full": RunConfig, "toy": RunConfig.toy}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _field_types() -> dict[str, object]:
    return typing.get_type_hints(RunConfig)


def _parse_value(name: str, raw: str):
    kind = _field_types()[name]
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if typing.get_origin(kind) is tuple:
            return tuple(int(x) for x in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None
    return raw


def read_config_file(path: str | Path) -> dict:
    """``key = value`` (or ``key: value``) per line; ``#`` starts a comment."""
    known = {f.name for f in dataclasses.fields(RunConfig)}
    values, errors = {}, []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            errors.append(f"{path}:{n}: expected 'key = value'")
            continue
        key, raw = (s.strip() for s in line.split(sep, 1))
        key = key.replace("-", "_")
        if key not in known:
            errors.append(f"{path}:{n}: unknown key {key!r}")
            continue
        try:
            values[key] = _parse_value(key, raw)
        except ConfigError as e:
            errors.append(f"{path}:{n}: {e}")
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return values


def _add_config_flags(p: argparse.ArgumentParser, names=None) -> None:
    types = _field_types()
    for f in dataclasses.fields(RunConfig):
        if names is not None and f.name not in names:
            continue
        flag = "--" + f.name.replace("_", "-")
        kind = types[f.name]
        help_default = f"default {f.default!r}"
        if kind is bool:
            p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction,
                           default=argparse.SUPPRESS, help=help_default)
        else:
            p.add_argument(flag, dest=f.name, type=lambda s, n=f.name: _parse_value(n, s),
                           default=argparse.SUPPRESS, metavar=f.name.upper(), help=help_default)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Preset defaults, then the config file, then explicit flags."""
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    values.update({k: v for k, v in vars(args).items() if k in fields})
    config = PRESETS[args.preset](**values)
    config.validate()
    return config


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="gradcap", description="Captioning with saliency-supervised attention.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="fine-tune the encoder, then train the captioner")
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--preset", choices=sorted(PRESETS), default="full",
                   help="baseline values before the config file and flags (default full)")
    p.add_argument("--no-resume", action="store_true", help="start over even if checkpoints exist")
    _add_config_flags(p)

    p = sub.add_parser("caption", help="caption images with a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, nargs="+")
    p.add_argument("--overlay-dir", help="write per-word attention overlays here")
    p.add_argument("--jsonl", help="also write one JSON record per image to this file")
    _add_config_flags(p, {"beam_size"})

    p = sub.add_parser("evaluate", help="score a model on an annotation file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--greedy", action="store_true", help="greedy decoding instead of beam search")
    _add_config_flags(p, {"dataset", "beam_size", "output_dir"})

    p = sub.add_parser("visualize-attention", help="saliency and predicted-attention overlays")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--words", required=True, nargs="+", help="words or category names")
    _add_config_flags(p, {"beam_size", "output_dir"})

    p = sub.add_parser("make-toy-data", help="write the synthetic shapes dataset")
    p.add_argument("--num-train", type=int, default=200)
    p.add_argument("--num-test", type=int, default=50)
    p.add_argument("--num-categories", type=int, default=ToyConfig.num_categories)
    p.add_argument("--order", choices=("category", "spatial"), default=ToyConfig.order)
    p.add_argument("--colour-words", action=argparse.BooleanOptionalAction, default=ToyConfig.colour_words)
    _add_config_flags(p, {"seed", "output_dir"})
    return ap


def _output_dir(args, default: str) -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV) or getattr(args, "output_dir", None) or default)


def cmd_train(args) -> int:
    config = resolve_config(args)
    res = train(config, resume=not args.no_resume)
    last = res.caption_trace[-1] if res.caption_trace else {}
    print(json.dumps({"output_dir": str(res.output_dir), "model": str(res.model_path), **last}))
    return EXIT_OK


def cmd_caption(args) -> int:
    model = load_model(args.checkpoint)
    beam = getattr(args, "beam_size", None)
    if beam is not None and beam < 1:
        raise ConfigError("beam_size must be positive")
    records = []
    for n, path in enumerate(args.image):
        overlay = Path(args.overlay_dir) / Path(path).stem if args.overlay_dir else None
        rec = caption_image(model, path, beam, overlay, image_id=n)
        rec["image"] = str(path)
        records.append(rec)
        print(f"{path}\t{rec['caption']}")
    if args.jsonl:
        with open(args.jsonl, "w") as f:
            for rec in records:
                f.write(json.dumps(rec) + "\n")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if not getattr(args, "dataset", None):
        raise ConfigError("invalid configuration:\n  --dataset is required")
    model = load_model(args.checkpoint)
    samples, report = load_coco_format(args.dataset, model.mapping, model.config.max_caption_length)
    if not samples:
        raise RuntimeError(f"{args.dataset}: no usable samples")
    for iid, msg in report.errors:
        logger.warning("image %s: %s", iid, msg)
    result = evaluate(model, samples, getattr(args, "beam_size", None), greedy=args.greedy)
    out = _output_dir(args, str(Path(args.checkpoint).parent / "eval"))
    write_report(result, out)
    print(result.table())
    return EXIT_OK


def cmd_visualize(args) -> int:
    model = load_model(args.checkpoint)
    image = read_image(args.image)
    out = _output_dir(args, str(Path(args.checkpoint).parent / "overlays"))
    res = visualize_attention(model, image, args.words, out, beam_size=getattr(args, "beam_size", None))
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(res.caption)
    for f in res.files:
        print(f)
    return EXIT_OK


def cmd_make_toy_data(args) -> int:
    seed = getattr(args, "seed", 0)
    if args.num_train < 1 or args.num_test < 0:
        raise ConfigError("need --num-train >= 1 and --num-test >= 0")
    try:
        toy = ToyConfig(num_images=args.num_train + args.num_test, num_categories=args.num_categories,
                        max_shapes=min(3, args.num_categories), order=args.order,
                        colour_words=args.colour_words)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    samples = generate_toy_dataset(toy, seed=seed)
    mapping = toy_mapping(toy)
    out = _output_dir(args, "data/toy")
    paths = [write_toy_dataset(samples[: args.num_train], mapping, out, "train")]
    if args.num_test:
        paths.append(write_toy_dataset(samples[args.num_train :], mapping, out, "test"))
    for p in paths:
        print(p)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "caption": cmd_caption, "evaluate": cmd_evaluate,
            "visualize-attention": cmd_visualize, "make-toy-data": cmd_make_toy_data}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"gradcap: error: {e}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"gradcap: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (CheckpointError, OSError, RuntimeError, ValueError) as e:
        print(f"gradcap: {args.command} failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
