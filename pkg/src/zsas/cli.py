"""Command-line entry point.

Subcommands:
  run             segment every test image of a dataset
  eval            score predictions against ground truth
  ablate-kernel   3x3 grid over dilation kernel shapes and sizes
  ablate-cascade  compare cascade depths 1-3 (stages decoded once)
  synth-data      materialize a synthetic dataset + backend manifest

Exit codes: 0 success, 1 per-image failures occurred, 2 configuration
or backend-contract error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .backends import file_backend_load, graph_backend_load
from .backends.base import ScorerBackend, SegmenterBackend
from .backends.synthetic import backends_from_params, generate_scenes, suite_params_to_json
from .dataset import DatasetIndex, index_dataset, load_truth
from .errors import BackendError, ConfigError, DatasetError, ZsasError
from .imgproc import dilate
from .io import load_score_grid, save_grid, save_mask
from .metrics import evaluate, eval_to_dict, write_eval_csv
from .pipeline import PipelineResult, process_image
from .types import (
    BinaryMask,
    PipelineConfig,
    StructuringElement,
    config_from_dict,
    config_to_dict,
    validate_config,
)

KERNEL_ABLATION_SHAPES = ("cross", "rectangle", "ellipse")
KERNEL_ABLATION_SIZES = (20, 25, 30)
CASCADE_LABELS = {1: "only points", 2: "points+logit1", 3: "points+box+logit2"}


def build_backends(spec: str, dataset_root: Path | None) -> tuple[ScorerBackend, SegmenterBackend]:
    if spec == "synthetic":
        if dataset_root is None:
            raise ConfigError("the synthetic backend requires --dataset", field="backend")
        params_path = dataset_root / "synthetic_backend.json"
        if not params_path.exists():
            raise ConfigError(
                f"synthetic backend manifest not found: {params_path} (create the dataset "
                f"with 'zsas synth-data')",
                field="backend",
            )
        scorer, segmenter, _ = backends_from_params(json.loads(params_path.read_text()))
        return scorer, segmenter
    if spec.startswith("files:"):
        return file_backend_load(spec[len("files:") :])
    if spec.startswith("graphs:"):
        parts = spec[len("graphs:") :].split(",")
        if len(parts) != 3:
            raise ConfigError(
                "graphs backend spec must be graphs:<encoder>,<decoder>,<scorer>", field="backend"
            )
        return graph_backend_load(parts[0], parts[1], parts[2])
    raise ConfigError(f"unknown backend spec: {spec!r}", field="backend")


def _parse_kernel_size(text: str) -> tuple[int, int]:
    parts = text.replace("x", ",").split(",")
    try:
        if len(parts) == 1:
            n = int(parts[0])
            return n, n
        if len(parts) == 2:
            return int(parts[0]), int(parts[1])
    except ValueError:
        pass
    raise ConfigError(f"kernel size must be N or W,H, got {text!r}", field="kernel.size")


def config_from_args(args) -> PipelineConfig:
    if args.config:
        config = config_from_dict(json.loads(Path(args.config).read_text()))
    else:
        config = PipelineConfig()
    updates = {}
    for flag, field in (
        ("extreme_threshold", "extreme_threshold"),
        ("k_positive", "k_positive"),
        ("k_negative", "k_negative"),
        ("min_spacing", "min_spacing"),
        ("cascade_depth", "cascade_depth"),
        ("working_resolution", "working_resolution"),
        ("output_map", "output_map_mode"),
        ("blend_weight", "blend_weight"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            updates[field] = value
    shape = getattr(args, "kernel_shape", None) or config.kernel.shape
    if getattr(args, "kernel_size", None) is not None:
        size = _parse_kernel_size(args.kernel_size)
    else:
        size = (config.kernel.width, config.kernel.height)
    updates["kernel"] = StructuringElement.of(shape, size)
    return validate_config(replace(config, **updates))


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags below override its fields")
    parser.add_argument("--extreme-threshold", type=float, dest="extreme_threshold")
    parser.add_argument("--k-positive", type=int, dest="k_positive")
    parser.add_argument("--k-negative", type=int, dest="k_negative")
    parser.add_argument("--min-spacing", type=float, dest="min_spacing")
    parser.add_argument("--kernel-shape", choices=KERNEL_ABLATION_SHAPES, dest="kernel_shape")
    parser.add_argument("--kernel-size", dest="kernel_size", help="N or W,H (evens round up)")
    parser.add_argument("--cascade-depth", type=int, dest="cascade_depth")
    parser.add_argument("--working-resolution", type=int, dest="working_resolution")
    parser.add_argument("--output-map", choices=("binary", "blended"), dest="output_map")
    parser.add_argument("--blend-weight", type=float, dest="blend_weight")


def _add_run_io_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", required=True, help="dataset root (MVTec-style layout)")
    parser.add_argument(
        "--backend",
        required=True,
        help="synthetic | files:<manifest> | graphs:<enc>,<dec>,<scorer>",
    )
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--workers", type=int, default=None, help="worker pool size")


def _overlay(image_path: Path, mask: np.ndarray, out_path: Path) -> None:
    """Mask boundary (1 px, solid) plus translucent fill on the input."""
    h, w = mask.shape
    with Image.open(image_path) as img:
        base = np.asarray(img.convert("RGB").resize((w, h), Image.BILINEAR)).astype(np.float32)
    boundary = dilate(BinaryMask(mask), StructuringElement.of("rectangle", 3)).values & ~mask
    fill = mask[..., None] * np.array([255.0, 64.0, 64.0])
    out = np.where(mask[..., None], 0.6 * base + 0.4 * fill, base)
    out[boundary] = (255.0, 32.0, 32.0)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(out.astype(np.uint8), mode="RGB").save(out_path, format="PNG")


def _dump_debug(result: PipelineResult, debug_dir: Path) -> None:
    inter = result.intermediates
    save_mask(inter.extreme_mask, debug_dir / "extreme_mask.png")
    save_mask(inter.ring_mask, debug_dir / "ring_mask.png")
    save_grid(inter.masked_anomaly, debug_dir / "masked_anomaly.f32")
    save_grid(inter.similarity, debug_dir / "similarity.f32")
    trace = result.trace
    for i, (mask, logit) in enumerate(zip(trace.stage_masks, trace.stage_logits), start=1):
        save_mask(mask, debug_dir / f"stage{i}_mask.png")
        save_grid(logit, debug_dir / f"stage{i}_logit.f32")
    meta = {
        "degraded_prompts": inter.degraded,
        "degraded_cascade": trace.degraded,
        "stage_scores": list(trace.stage_scores),
        "box": None
        if trace.derived_box is None
        else [trace.derived_box.x_min, trace.derived_box.y_min,
              trace.derived_box.x_max, trace.derived_box.y_max],
        "points": [
            {"x": p.x, "y": p.y, "polarity": p.polarity, "score": p.score}
            for p in result.prompts.points
        ],
    }
    (debug_dir / "trace.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def run_dataset(
    index: DatasetIndex,
    scorer: ScorerBackend,
    segmenter: SegmenterBackend,
    config: PipelineConfig,
    out_dir: Path,
    workers: int | None = None,
    overlays: bool = False,
    debug_dumps: bool = False,
    backend_spec: str | None = None,
) -> tuple[int, list[str]]:
    """Segment every entry; returns (ok_count, failed image ids)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    statuses: dict[str, str] = {}

    def one(entry) -> None:
        image_id = entry.image_id
        result = process_image(scorer, segmenter, str(entry.image_path), config)
        save_grid(result.final_map, out_dir / "maps" / f"{image_id}.f32")
        save_mask(result.trace.stage_masks[-1], out_dir / "masks" / f"{image_id}.png")
        if overlays:
            _overlay(
                entry.image_path,
                result.trace.stage_masks[-1].values,
                out_dir / "overlays" / f"{image_id}.png",
            )
        if debug_dumps:
            _dump_debug(result, out_dir / "debug" / image_id)

    pool_size = workers if workers and workers > 0 else (os.cpu_count() or 1)
    with concurrent.futures.ThreadPoolExecutor(max_workers=pool_size) as pool:
        futures = {pool.submit(one, e): e for e in index.entries}
        for future, entry in futures.items():
            try:
                future.result()
                statuses[entry.image_id] = "ok"
            except BackendError:
                raise
            except (ZsasError, OSError) as exc:
                statuses[entry.image_id] = f"error: {exc}"

    failed = sorted(k for k, v in statuses.items() if v != "ok")
    manifest = {
        "version": __version__,
        "backend": backend_spec or scorer.name,
        "config": config_to_dict(config),
        "images": [{"id": k, "status": statuses[k]} for k in sorted(statuses)],
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return len(statuses) - len(failed), failed


def cmd_run(args) -> int:
    index = index_dataset(args.dataset)
    scorer, segmenter = build_backends(args.backend, Path(args.dataset))
    config = config_from_args(args)
    ok, failed = run_dataset(
        index,
        scorer,
        segmenter,
        config,
        Path(args.out),
        workers=args.workers,
        overlays=args.overlays,
        debug_dumps=args.debug_dumps,
        backend_spec=args.backend,
    )
    print(f"segmented {ok}/{ok + len(failed)} images -> {args.out}")
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


def _load_predictions(index: DatasetIndex, pred_dir: Path):
    maps, truths, ids = [], [], []
    missing = []
    for entry in index.entries:
        path = pred_dir / "maps" / f"{entry.image_id}.f32"
        if not path.exists():
            missing.append(entry.image_id)
            continue
        grid = load_score_grid(path)
        maps.append(grid)
        truths.append(load_truth(entry, grid.height, grid.width))
        ids.append(entry.image_id)
    if missing:
        raise DatasetError(f"missing predictions for: {', '.join(missing)}")
    return ids, maps, truths


def cmd_eval(args) -> int:
    index = index_dataset(args.dataset)
    pred_dir = Path(args.pred)
    ids, maps, truths = _load_predictions(index, pred_dir)
    result = evaluate(ids, maps, truths)
    payload = eval_to_dict(result)
    by_category: dict[str, list[int]] = {}
    for i, image_id in enumerate(ids):
        by_category.setdefault(image_id.split("/", 1)[0], []).append(i)
    payload["per_category"] = {
        cat: eval_to_dict(
            evaluate([ids[i] for i in rows], [maps[i] for i in rows], [truths[i] for i in rows])
        )["pooled"]
        for cat, rows in sorted(by_category.items())
    }
    out_dir = Path(args.out) if args.out else pred_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "eval.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    write_eval_csv(result, out_dir / "eval.csv")
    with open(out_dir / "eval.csv", "a", newline="") as fh:
        for cat, pooled in payload["per_category"].items():
            fh.write(
                f"CATEGORY:{cat},{pooled['auroc']:.6f},{pooled['f1_max']:.6f},{pooled['ap']:.6f}\n"
            )
    pooled = payload["pooled"]
    print(
        f"pooled auroc={pooled['auroc']:.4f} f1_max={pooled['f1_max']:.4f} ap={pooled['ap']:.4f}"
    )
    return 0


def _precompute(index, scorer, segmenter):
    """Score and encode every image once for ablation loops."""
    from .imgproc import minmax_normalize, resize_bilinear

    size = segmenter.working_resolution
    cache = []
    for entry in index.entries:
        raw = scorer.score(str(entry.image_path))
        anomaly = minmax_normalize(resize_bilinear(raw, size, size))
        features = segmenter.encode(str(entry.image_path))
        truth = load_truth(entry, size, size)
        cache.append((entry, anomaly, features, truth))
    return cache


def ablate_kernel(index, scorer, segmenter, config) -> list[dict]:
    """Pooled metrics for each kernel shape/size cell (Table-2 grid)."""
    from .cascade import run_cascade
    from .pipeline import effective_spacing
    from .prompts import generate_prompts

    cache = _precompute(index, scorer, segmenter)
    spacing = effective_spacing(config, segmenter)
    rows = []
    for shape in KERNEL_ABLATION_SHAPES:
        for size in KERNEL_ABLATION_SIZES:
            kernel = StructuringElement.of(shape, size)
            cell_cfg = validate_config(replace(config, kernel=kernel, min_spacing=spacing,
                                                working_resolution=segmenter.working_resolution))
            maps, truths, ids = [], [], []
            for entry, anomaly, features, truth in cache:
                prompts, _ = generate_prompts(anomaly, features, cell_cfg)
                trace = run_cascade(segmenter, features, prompts, cell_cfg, anomaly=anomaly)
                maps.append(trace.final_map)
                truths.append(truth)
                ids.append(entry.image_id)
            result = evaluate(ids, maps, truths)
            rows.append(
                {
                    "shape": shape,
                    "size": size,
                    "effective_kernel": [kernel.width, kernel.height],
                    "auroc": result.auroc,
                    "f1_max": result.f1_max,
                    "ap": result.ap,
                }
            )
    return rows


def cmd_ablate_kernel(args) -> int:
    index = index_dataset(args.dataset)
    scorer, segmenter = build_backends(args.backend, Path(args.dataset))
    config = config_from_args(args)
    rows = ablate_kernel(index, scorer, segmenter, config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation_kernel.json").write_text(json.dumps(rows, indent=2, sort_keys=True))
    with open(out_dir / "ablation_kernel.csv", "w") as fh:
        fh.write("shape,size,auroc,f1_max,ap\n")
        for r in rows:
            fh.write(f"{r['shape']},{r['size']},{r['auroc']:.6f},{r['f1_max']:.6f},{r['ap']:.6f}\n")
    for r in rows:
        print(f"{r['shape']:>9} ({r['size']},{r['size']})  "
              f"auroc={r['auroc']:.4f} f1_max={r['f1_max']:.4f} ap={r['ap']:.4f}")
    return 0


def ablate_cascade(index, scorer, segmenter, config) -> tuple[list[dict], int]:
    """Pooled metrics at depths 1-3, decoding each stage exactly once.

    Returns (rows, decoder calls per image).
    """
    from .cascade import finalize_map, run_cascade
    from .pipeline import effective_spacing
    from .prompts import generate_prompts

    depth_cfg = validate_config(replace(config, cascade_depth=3))
    cache = _precompute(index, scorer, segmenter)
    calls_before = getattr(segmenter, "decode_calls", None)
    per_depth: dict[int, list] = {1: [], 2: [], 3: []}
    truths, ids = [], []
    spacing = effective_spacing(depth_cfg, segmenter)
    mining_cfg = replace(depth_cfg, min_spacing=spacing)
    for entry, anomaly, features, truth in cache:
        prompts, _ = generate_prompts(anomaly, features, mining_cfg)
        trace = run_cascade(segmenter, features, prompts, depth_cfg, anomaly=anomaly)
        for depth in (1, 2, 3):
            per_depth[depth].append(finalize_map(trace.stage_masks[depth - 1], depth_cfg, anomaly))
        truths.append(truth)
        ids.append(entry.image_id)
    rows = []
    for depth in (1, 2, 3):
        result = evaluate(ids, per_depth[depth], truths)
        rows.append(
            {
                "cascade": CASCADE_LABELS[depth],
                "depth": depth,
                "auroc": result.auroc,
                "f1_max": result.f1_max,
                "ap": result.ap,
            }
        )
    calls_per_image = 0
    if calls_before is not None and cache:
        calls_per_image = (segmenter.decode_calls - calls_before) // len(cache)
    return rows, calls_per_image


def cmd_ablate_cascade(args) -> int:
    index = index_dataset(args.dataset)
    scorer, segmenter = build_backends(args.backend, Path(args.dataset))
    config = config_from_args(args)
    rows, _ = ablate_cascade(index, scorer, segmenter, config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation_cascade.json").write_text(json.dumps(rows, indent=2, sort_keys=True))
    with open(out_dir / "ablation_cascade.csv", "w") as fh:
        fh.write("cascade,auroc,f1_max,ap\n")
        for r in rows:
            fh.write(f"{r['cascade']},{r['auroc']:.6f},{r['f1_max']:.6f},{r['ap']:.6f}\n")
    for r in rows:
        print(f"{r['cascade']:>18}  auroc={r['auroc']:.4f} "
              f"f1_max={r['f1_max']:.4f} ap={r['ap']:.4f}")
    return 0


def write_synthetic_dataset(out_dir: Path, params: dict) -> None:
    """Materialize the synthetic suite as an MVTec-style dataset."""
    from .types import BinaryMask

    scenes = generate_scenes(
        params["scenes"], params["seed"], params["size"],
        params["feature_size"], params["channels"], params["noise"],
    )
    for scene in scenes:
        shade = (scene.labels * (255 // max(1, scene.labels.max()))).astype(np.uint8)
        img_path = out_dir / "synthetic" / "test" / "defect" / f"{scene.scene_id}.png"
        img_path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(shade, mode="L").save(img_path, format="PNG")
        save_mask(
            scene.truth_mask(),
            out_dir / "synthetic" / "ground_truth" / "defect" / f"{scene.scene_id}_mask.png",
        )
    suite_params_to_json(params, out_dir / "synthetic_backend.json")


def cmd_synth_data(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = {
        "scenes": args.scenes,
        "seed": args.seed,
        "size": args.size,
        "feature_size": args.feature_size,
        "channels": args.channels,
        "noise": args.noise,
    }
    write_synthetic_dataset(out_dir, params)
    print(f"wrote {args.scenes} synthetic scenes -> {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zsas", description=__doc__)
    parser.add_argument("--version", action="version", version=f"zsas {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="segment a dataset")
    _add_run_io_flags(p_run)
    _add_config_flags(p_run)
    p_run.add_argument("--overlays", action="store_true", help="write overlay PNGs")
    p_run.add_argument("--debug-dumps", action="store_true", dest="debug_dumps",
                       help="dump prompt/cascade intermediates per image")
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("eval", help="evaluate predictions")
    p_eval.add_argument("--pred", required=True, help="cmd-run output directory")
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--out", default=None, help="report directory (default: --pred)")
    p_eval.set_defaults(func=cmd_eval)

    p_ak = sub.add_parser("ablate-kernel", help="kernel shape/size ablation")
    _add_run_io_flags(p_ak)
    _add_config_flags(p_ak)
    p_ak.set_defaults(func=cmd_ablate_kernel)

    p_ac = sub.add_parser("ablate-cascade", help="cascade depth ablation")
    _add_run_io_flags(p_ac)
    _add_config_flags(p_ac)
    p_ac.set_defaults(func=cmd_ablate_cascade)

    p_sd = sub.add_parser("synth-data", help="write a synthetic dataset")
    p_sd.add_argument("--out", required=True)
    p_sd.add_argument("--scenes", type=int, default=12)
    p_sd.add_argument("--seed", type=int, default=0)
    p_sd.add_argument("--size", type=int, default=256)
    p_sd.add_argument("--feature-size", type=int, default=64, dest="feature_size")
    p_sd.add_argument("--channels", type=int, default=16)
    p_sd.add_argument("--noise", choices=("none", "small", "large", "mixed"), default="small")
    p_sd.set_defaults(func=cmd_synth_data)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ZsasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
