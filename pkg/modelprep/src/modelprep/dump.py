"""Precompute anomaly maps and feature grids into a file-backend manifest.

Runs the *exported* graphs (not the in-memory models) so the dump
validates the serialized artifacts end to end, then writes one manifest
whose paths are all relative to its own location.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .export import export_scorer, export_segmenter
from .formats import preprocess_image, write_grid
from .recipe import ExportRecipe


class _TorchscriptRunner:
    def __init__(self, path: Path):
        extra = {"backend.json": ""}
        self.module = torch.jit.load(str(path), map_location="cpu", _extra_files=extra)
        self.metadata = json.loads(extra["backend.json"])

    def __call__(self, image: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            return self.module(torch.from_numpy(image)).numpy()


class _OnnxRunner:
    def __init__(self, path: Path, output: str):
        import onnxruntime as ort  # noqa: PLC0415

        self.session = ort.InferenceSession(str(path), providers=["CPUExecutionProvider"])
        self.metadata = dict(self.session.get_modelmeta().custom_metadata_map)
        self.output = output

    def __call__(self, image: np.ndarray) -> np.ndarray:
        (out,) = self.session.run([self.output], {"image": image})
        return out


def _runner(recipe: ExportRecipe, path: Path, output: str):
    if recipe.graph_format == "torchscript":
        return _TorchscriptRunner(path)
    return _OnnxRunner(path, output)


def dump_precomputed(recipe: ExportRecipe, image_paths: list[Path]) -> Path:
    """Export (if needed) and dump tensors for every image.

    Returns the manifest path. Per-image failures are recorded in the
    manifest (``failed`` list, ``partial`` flag) rather than aborting
    the whole dump.
    """
    out_dir = recipe.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    scorer_path = recipe.path("scorer")
    encoder_path = recipe.path("encoder")
    decoder_path = recipe.path("decoder")
    if not (scorer_path.exists() and encoder_path.exists() and decoder_path.exists()):
        export_segmenter(recipe)
        export_scorer(recipe)

    scorer = _runner(recipe, scorer_path, "anomaly_map")
    encoder = _runner(recipe, encoder_path, "image_embeddings")
    size = recipe.input_size

    images: dict[str, dict] = {}
    failed: list[str] = []
    feature_dims: list[int] | None = None
    for image_path in image_paths:
        image_path = Path(image_path)
        stem = image_path.stem
        try:
            x = preprocess_image(image_path, size, recipe.mean, recipe.std)
            anomaly = np.clip(scorer(x)[0, 0], 0.0, 1.0)
            features = encoder(x)[0]
            feature_dims = list(features.shape)
            write_grid(anomaly, out_dir / "maps" / f"{stem}.f32", normalized=True)
            write_grid(features, out_dir / "features" / f"{stem}.f32")
            images[stem] = {
                "anomaly_map": f"maps/{stem}.f32",
                "features": f"features/{stem}.f32",
            }
        except (OSError, ValueError, RuntimeError) as exc:
            failed.append(f"{image_path}: {exc}")
    if feature_dims is None:
        raise RuntimeError(f"dump produced no tensors; failures: {failed}")

    manifest = {
        "native_resolution": size,
        "working_resolution": size,
        "logit_resolution": size // 4,
        "feature_dims": feature_dims,
        "images": images,
        "decoder": {"kind": recipe.graph_format, "path": decoder_path.name},
        "partial": bool(failed),
        "failed": failed,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path
