"""Command-line entry point for export, dump, and adapter training."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .adapters import train_adapters
from .dump import dump_precomputed
from .export import ExportUnavailableError, export_scorer, export_segmenter
from .nets import ModelUnavailableError
from .recipe import DEFAULT_TAPPED_LAYERS, ExportRecipe


def _recipe_from_args(args) -> ExportRecipe:
    return ExportRecipe(
        out_dir=Path(args.out),
        scorer_model=args.scorer_model,
        segmenter_model=args.segmenter_model,
        tapped_layers=tuple(args.tapped_layers),
        adapter_checkpoint=Path(args.adapters) if args.adapters else None,
        input_size=args.input_size,
        graph_format=args.format,
        seed=args.seed,
    )


def _add_recipe_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--format", choices=("onnx", "torchscript"), default="onnx")
    parser.add_argument("--input-size", type=int, default=256, dest="input_size")
    parser.add_argument("--scorer-model", default="reference-tiny", dest="scorer_model")
    parser.add_argument("--segmenter-model", default="reference-tiny", dest="segmenter_model")
    parser.add_argument(
        "--tapped-layers", type=int, nargs="+", default=list(DEFAULT_TAPPED_LAYERS),
        dest="tapped_layers",
    )
    parser.add_argument("--adapters", default=None, help="adapter checkpoint path")
    parser.add_argument("--seed", type=int, default=0)


def cmd_export_segmenter(args) -> int:
    enc, dec = export_segmenter(_recipe_from_args(args))
    print(f"wrote {enc} and {dec}")
    return 0


def cmd_export_scorer(args) -> int:
    path = export_scorer(_recipe_from_args(args))
    print(f"wrote {path}")
    return 0


def cmd_dump(args) -> int:
    manifest = dump_precomputed(_recipe_from_args(args), [Path(p) for p in args.images])
    print(f"wrote {manifest}")
    return 0


def cmd_train_adapters(args) -> int:
    recipe = _recipe_from_args(args)
    history = train_adapters(
        recipe,
        Path(args.dataset),
        Path(args.checkpoint),
        epochs=args.epochs,
        batch_size=args.batch_size,
    )
    print(f"trained {len(history)} epochs; final loss {history[-1]:.5f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modelprep", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export-segmenter", help="export encoder + decoder graphs")
    _add_recipe_flags(p)
    p.set_defaults(func=cmd_export_segmenter)

    p = sub.add_parser("export-scorer", help="export the anomaly scorer graph")
    _add_recipe_flags(p)
    p.set_defaults(func=cmd_export_scorer)

    p = sub.add_parser("dump", help="precompute tensors into a file-backend manifest")
    _add_recipe_flags(p)
    p.add_argument("--images", nargs="+", required=True)
    p.set_defaults(func=cmd_dump)

    p = sub.add_parser("train-adapters", help="train the scorer's linear adapters")
    _add_recipe_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=16, dest="batch_size")
    p.set_defaults(func=cmd_train_adapters)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ExportUnavailableError, ModelUnavailableError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
