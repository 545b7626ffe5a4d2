"""File backend: precomputed anomaly maps and feature grids served from
disk, with mask decoding delegated to another segmenter.

The manifest is a JSON document; all paths are relative to its
location:

    {
      "native_resolution": 256,
      "working_resolution": 256,
      "logit_resolution": 64,
      "feature_dims": [16, 64, 64],
      "images": {
        "<image id>": {"anomaly_map": "maps/x.f32", "features": "feats/x.f32"}
      },
      "decoder": {"kind": "synthetic", "scenes": 12, "seed": 0, ...}
                 | {"kind": "onnx", "path": "decoder.onnx"}
                 | {"kind": "torchscript", "path": "decoder.pt"}
    }
"""

from __future__ import annotations

import json
from pathlib import Path

from ..errors import DataError
from ..io import load_feature_grid, load_score_grid
from ..types import FeatureGrid, PromptSet, ScoreGrid
from .base import Candidate, ScorerBackend, SegmenterBackend, check_candidates


def _entry_path(root: Path, entry: dict, key: str, image_id: str) -> Path:
    if key not in entry:
        raise DataError(f"manifest entry for {image_id!r} lacks {key!r}")
    return root / entry[key]


def _lookup(images: dict, image_ref: str) -> dict | None:
    """Match a reference against manifest ids: exact, then filename,
    then stem (so dataset paths resolve against id-keyed manifests)."""
    ref = str(image_ref)
    for key in (ref, Path(ref).name, Path(ref).stem):
        if key in images:
            return images[key]
    return None


class FileScorer(ScorerBackend):
    def __init__(self, root: Path, images: dict, native_resolution: int):
        self.name = "file-scorer"
        self._root = root
        self._images = images
        self.native_resolution = native_resolution

    def score(self, image_ref: str) -> ScoreGrid:
        entry = _lookup(self._images, image_ref)
        if entry is None:
            raise DataError(f"image id {image_ref!r} not in manifest")
        grid = load_score_grid(_entry_path(self._root, entry, "anomaly_map", str(image_ref)))
        n = self.native_resolution
        if grid.values.shape != (n, n):
            raise DataError(
                f"anomaly map for {image_ref!r} has shape {grid.values.shape}, expected ({n}, {n})"
            )
        if not grid.normalized:
            raise DataError(f"anomaly map for {image_ref!r} is not flagged normalized")
        return grid


class FileSegmenter(SegmenterBackend):
    def __init__(
        self,
        root: Path,
        images: dict,
        working_resolution: int,
        logit_resolution: int,
        feature_dims: tuple[int, int, int],
        decoder: SegmenterBackend,
    ):
        self.name = "file-segmenter"
        self._root = root
        self._images = images
        self.working_resolution = working_resolution
        self.logit_resolution = logit_resolution
        self.feature_dims = feature_dims
        self._decoder = decoder

    def encode(self, image_ref: str) -> FeatureGrid:
        entry = _lookup(self._images, image_ref)
        if entry is None:
            raise DataError(f"image id {image_ref!r} not in manifest")
        grid = load_feature_grid(_entry_path(self._root, entry, "features", str(image_ref)))
        if grid.values.shape != self.feature_dims:
            raise DataError(
                f"features for {image_ref!r} have shape {grid.values.shape}, "
                f"manifest declares {self.feature_dims}"
            )
        return grid

    def decode(self, features: FeatureGrid, prompts: PromptSet, multimask: bool) -> list[Candidate]:
        return check_candidates(self, self._decoder.decode(features, prompts, multimask))


def _build_decoder(root: Path, spec: dict) -> SegmenterBackend:
    kind = spec.get("kind")
    if kind == "synthetic":
        from .synthetic import backends_from_params

        params = {k: v for k, v in spec.items() if k != "kind"}
        _, segmenter, _ = backends_from_params(params)
        return segmenter
    if kind == "onnx":
        from .graphs import OnnxDecoder

        return OnnxDecoder(root / spec["path"])
    if kind == "torchscript":
        from .graphs import TorchscriptDecoder

        return TorchscriptDecoder(root / spec["path"])
    raise DataError(f"unknown decoder kind in manifest: {kind!r}")


def file_backend_load(manifest_path: str | Path) -> tuple[FileScorer, FileSegmenter]:
    """Load a manifest and return (scorer, segmenter) backends."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest is not valid JSON: {manifest_path}: {exc}") from exc
    root = manifest_path.parent
    for key in ("native_resolution", "working_resolution", "logit_resolution", "feature_dims", "images", "decoder"):
        if key not in manifest:
            raise DataError(f"manifest lacks required key {key!r}")
    images = manifest["images"]
    if not isinstance(images, dict) or not images:
        raise DataError("manifest 'images' must be a non-empty mapping")
    feature_dims = tuple(int(d) for d in manifest["feature_dims"])
    if len(feature_dims) != 3:
        raise DataError(f"feature_dims must have 3 entries, got {feature_dims}")
    decoder = _build_decoder(root, manifest["decoder"])
    scorer = FileScorer(root, images, int(manifest["native_resolution"]))
    segmenter = FileSegmenter(
        root,
        images,
        int(manifest["working_resolution"]),
        int(manifest["logit_resolution"]),
        feature_dims,
        decoder,
    )
    return scorer, segmenter
