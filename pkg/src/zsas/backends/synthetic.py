"""Deterministic synthetic backend used as a desk-scale oracle.

A scene is a latent region map (regions partition the image), one
feature vector per region, an anomaly map that is high exactly on the
designated anomaly regions, and a set of noise blobs. Decoding follows
fixed, assertable semantics that emulate how a promptable segmenter
behaves under sparse and hybrid prompts:

  - the base mask is the union of regions containing a positive point,
    minus regions containing a negative point;
  - noise blobs attach to the mask only under sparse prompting: never
    when a box prompt is present, and under a dense-logit prompt only
    when the blob's mean logit is >= 0 (small blobs dilute below zero in
    the low-resolution logit and are stripped; large distant blobs
    survive until a box prompt excludes them);
  - the returned score is the IoU of the candidate against its own
    noise-free version, and the dense logit output is the +1/-1 mask
    field downsampled to the backend's logit resolution.

Everything is a pure function of (scene, prompts), so repeated calls
are bit-identical.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import BackendError, DataError
from ..imgproc import resize_bilinear
from ..types import BinaryMask, FeatureGrid, PromptSet, ScoreGrid
from .base import Candidate, ScorerBackend, SegmenterBackend, check_candidates, require_positive


@dataclass(frozen=True)
class NoiseBlob:
    """A rectangular noise component tied to a latent region."""

    region: int
    y0: int
    x0: int
    height: int
    width: int

    def paint(self, out: np.ndarray) -> None:
        out[self.y0 : self.y0 + self.height, self.x0 : self.x0 + self.width] = True


@dataclass(frozen=True)
class SyntheticScene:
    """One synthetic test image with known latent structure."""

    scene_id: str
    labels: np.ndarray  # (S, S) int32, 0 = background
    region_vectors: np.ndarray  # (n_regions + 1, C) float32, row 0 = background
    noise_spec: tuple[NoiseBlob, ...]
    anomaly_regions: tuple[int, ...]  # region ids forming the ground truth
    anomaly_map: ScoreGrid

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int32)
        labels = labels.copy() if labels.flags.writeable else labels
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        vectors = np.asarray(self.region_vectors, dtype=np.float32)
        vectors = vectors.copy() if vectors.flags.writeable else vectors
        vectors.setflags(write=False)
        object.__setattr__(self, "region_vectors", vectors)
        if labels.max() >= vectors.shape[0]:
            raise DataError("every region label needs a feature vector")

    @property
    def size(self) -> int:
        return self.labels.shape[0]

    def truth_mask(self) -> BinaryMask:
        return BinaryMask(np.isin(self.labels, self.anomaly_regions))


def _downsample_logit(values: np.ndarray, logit_resolution: int) -> ScoreGrid:
    s = values.shape[0]
    if s % logit_resolution == 0:
        r = s // logit_resolution
        blocks = values.reshape(logit_resolution, r, logit_resolution, r)
        return ScoreGrid(blocks.mean(axis=(1, 3)).astype(np.float32))
    return resize_bilinear(ScoreGrid(values.astype(np.float32)), logit_resolution, logit_resolution)


def _blob_mean_logit(blob: NoiseBlob, dense: ScoreGrid, size: int) -> float:
    ys = np.arange(blob.y0, blob.y0 + blob.height)
    xs = np.arange(blob.x0, blob.x0 + blob.width)
    cy = ((ys + 0.5) * dense.height / size).astype(np.int64)
    cx = ((xs + 0.5) * dense.width / size).astype(np.int64)
    return float(dense.values[np.ix_(cy, cx)].mean())


def synthetic_decode(
    scene: SyntheticScene, prompts: PromptSet, multimask: bool, logit_resolution: int
) -> list[Candidate]:
    """Decode a prompt set against one scene (pure and deterministic)."""
    require_positive(prompts)
    if prompts.dense_logit is not None and prompts.dense_logit.values.shape != (
        logit_resolution,
        logit_resolution,
    ):
        raise DataError(
            f"dense logit prompt {prompts.dense_logit.values.shape} != "
            f"({logit_resolution}, {logit_resolution})"
        )
    labels = scene.labels
    size = scene.size

    def label_at(p) -> int:
        if not (0 <= p.y < size and 0 <= p.x < size):
            raise DataError(f"prompt point ({p.x}, {p.y}) is outside the {size}x{size} image")
        return int(labels[p.y, p.x])

    pos_regions = sorted({label_at(p) for p in prompts.positives()} - {0})
    neg_regions = {label_at(p) for p in prompts.negatives()}

    if not pos_regions:
        empty = BinaryMask(np.zeros((size, size), dtype=bool))
        logit = ScoreGrid(np.full((logit_resolution, logit_resolution), -1.0, dtype=np.float32))
        return [Candidate(empty, logit, 0.0)]

    groups = [[r] for r in pos_regions] if multimask else [pos_regions]
    box_field = prompts.box.rasterize(size, size) if prompts.box is not None else None

    candidates = []
    for group in groups:
        kept = [r for r in group if r not in neg_regions]
        core = np.isin(labels, kept)
        mask = core.copy()
        if prompts.box is None:
            for blob in scene.noise_spec:
                if blob.region not in kept:
                    continue
                if prompts.dense_logit is None or _blob_mean_logit(
                    blob, prompts.dense_logit, size
                ) >= 0.0:
                    blob.paint(mask)
        noise_free = core
        if box_field is not None:
            mask &= box_field
            noise_free = core & box_field
        union = int((mask | noise_free).sum())
        inter = int((mask & noise_free).sum())
        score = inter / union if union else 0.0
        logit = _downsample_logit(np.where(mask, 1.0, -1.0), logit_resolution)
        candidates.append(Candidate(BinaryMask(mask), logit, score))
    return candidates


def generate_scenes(
    n_scenes: int,
    seed: int = 0,
    size: int = 256,
    feature_size: int = 64,
    channels: int = 16,
    noise: str = "small",
    n_regions: tuple[int, int] = (3, 5),
) -> list[SyntheticScene]:
    """Deterministically generate a suite of scenes.

    ``noise`` is one of "none", "small" (2x2 blobs that dilute below
    zero in the low-res logit), "large" (12x12 blobs that survive it),
    or "mixed". Region boundaries are aligned to the feature grid so the
    latent structure is exactly recoverable from encoder features.
    """
    if noise not in ("none", "small", "large", "mixed"):
        raise DataError(f"unknown noise mode {noise!r}")
    if size % feature_size != 0:
        raise DataError("size must be a multiple of feature_size")
    ratio = size // feature_size
    scenes = []
    for index in range(n_scenes):
        rng = np.random.default_rng([seed, index])
        regions = int(rng.integers(n_regions[0], n_regions[1] + 1))
        coarse = np.zeros((feature_size, feature_size), dtype=np.int32)
        for region_id in range(1, regions + 1):
            for _ in range(60):
                rh = int(rng.integers(6, 16))
                rw = int(rng.integers(6, 16))
                y0 = int(rng.integers(0, feature_size - rh))
                x0 = int(rng.integers(0, feature_size - rw))
                window = coarse[max(0, y0 - 1) : y0 + rh + 1, max(0, x0 - 1) : x0 + rw + 1]
                if (window == 0).all():
                    coarse[y0 : y0 + rh, x0 : x0 + rw] = region_id
                    break
        placed_ids = [r for r in range(1, regions + 1) if (coarse == r).any()]
        labels = np.kron(coarse, np.ones((ratio, ratio), dtype=np.int32))

        vectors = rng.normal(size=(regions + 1, channels))
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)

        anomaly_region = int(placed_ids[rng.integers(0, len(placed_ids))])
        truth = labels == anomaly_region

        base = 0.1 + 0.8 * truth.astype(np.float64) + 0.02 * rng.random((size, size))
        lo, hi = base.min(), base.max()
        anomaly_map = ScoreGrid(((base - lo) / (hi - lo)).astype(np.float32), normalized=True)

        blobs: list[NoiseBlob] = []
        if noise != "none":
            ys, xs = np.nonzero(truth)
            tb = (ys.min(), xs.min(), ys.max(), xs.max())
            occupied = labels != 0
            n_blobs = int(rng.integers(1, 4))
            for _ in range(n_blobs):
                side = {"small": 2, "large": 12}.get(noise) or int(rng.choice([2, 12]))
                for _ in range(100):
                    by = int(rng.integers(0, size - side))
                    bx = int(rng.integers(0, size - side))
                    margin = 16
                    if (
                        tb[0] - margin <= by + side and by <= tb[2] + margin
                        and tb[1] - margin <= bx + side and bx <= tb[3] + margin
                    ):
                        continue  # too close to the anomaly bounding box
                    if occupied[by : by + side, bx : bx + side].any():
                        continue
                    blobs.append(NoiseBlob(anomaly_region, by, bx, side, side))
                    occupied[by : by + side, bx : bx + side] = True
                    break

        scenes.append(
            SyntheticScene(
                scene_id=f"{index:03d}",
                labels=labels,
                region_vectors=vectors,
                noise_spec=tuple(blobs),
                anomaly_regions=(anomaly_region,),
                anomaly_map=anomaly_map,
            )
        )
    return scenes


def _scene_key(ref: str) -> str:
    return Path(str(ref)).stem


class SyntheticScorer(ScorerBackend):
    """Serves each scene's anomaly map, keyed by image id / path stem."""

    def __init__(self, scenes: list[SyntheticScene]):
        self.name = "synthetic-scorer"
        self._scenes = {s.scene_id: s for s in scenes}
        self.native_resolution = scenes[0].size if scenes else 0

    def score(self, image_ref: str) -> ScoreGrid:
        key = _scene_key(image_ref)
        if key not in self._scenes:
            raise BackendError(f"unknown synthetic scene: {image_ref!r}")
        return self._scenes[key].anomaly_map


class SyntheticSegmenter(SegmenterBackend):
    """Paints per-region feature vectors; decodes by recognizing the
    feature grid (content hash) and applying the scene semantics."""

    def __init__(self, scenes: list[SyntheticScene], feature_size: int = 64):
        if not scenes:
            raise DataError("SyntheticSegmenter needs at least one scene")
        self.name = "synthetic-segmenter"
        size = scenes[0].size
        channels = scenes[0].region_vectors.shape[1]
        self.working_resolution = size
        self.logit_resolution = size // 4
        self.feature_dims = (channels, feature_size, feature_size)
        self._scenes = {s.scene_id: s for s in scenes}
        self._features: dict[str, FeatureGrid] = {}
        self._by_hash: dict[bytes, SyntheticScene] = {}
        self._lock = threading.Lock()
        self.decode_calls = 0
        for scene in scenes:
            grid = self._paint(scene, feature_size)
            self._features[scene.scene_id] = grid
            digest = hashlib.sha1(grid.values.tobytes()).digest()
            if digest in self._by_hash:
                raise DataError("feature collision between scenes; regenerate with a new seed")
            self._by_hash[digest] = scene

    @staticmethod
    def _paint(scene: SyntheticScene, feature_size: int) -> FeatureGrid:
        size = scene.size
        ys = ((np.arange(feature_size) + 0.5) * size / feature_size).astype(np.int64)
        labels_f = scene.labels[np.ix_(ys, ys)]
        painted = scene.region_vectors[labels_f]  # (fh, fw, C)
        return FeatureGrid(np.ascontiguousarray(painted.transpose(2, 0, 1)))

    def encode(self, image_ref: str) -> FeatureGrid:
        key = _scene_key(image_ref)
        if key not in self._features:
            raise BackendError(f"unknown synthetic scene: {image_ref!r}")
        return self._features[key]

    def decode(self, features: FeatureGrid, prompts: PromptSet, multimask: bool) -> list[Candidate]:
        digest = hashlib.sha1(features.values.tobytes()).digest()
        scene = self._by_hash.get(digest)
        if scene is None:
            raise BackendError("feature grid does not match any synthetic scene")
        with self._lock:
            self.decode_calls += 1
        return check_candidates(
            self, synthetic_decode(scene, prompts, multimask, self.logit_resolution)
        )


def make_synthetic_backends(
    n_scenes: int = 12,
    seed: int = 0,
    size: int = 256,
    feature_size: int = 64,
    channels: int = 16,
    noise: str = "small",
) -> tuple[SyntheticScorer, SyntheticSegmenter, list[SyntheticScene]]:
    scenes = generate_scenes(n_scenes, seed, size, feature_size, channels, noise)
    return SyntheticScorer(scenes), SyntheticSegmenter(scenes, feature_size), scenes


SUITE_PARAM_KEYS = ("scenes", "seed", "size", "feature_size", "channels", "noise")


def suite_params_to_json(params: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(params, indent=2, sort_keys=True))


def backends_from_params(params: dict) -> tuple[SyntheticScorer, SyntheticSegmenter, list[SyntheticScene]]:
    unknown = set(params) - set(SUITE_PARAM_KEYS)
    if unknown:
        raise DataError(f"unknown synthetic suite parameter(s): {sorted(unknown)}")
    return make_synthetic_backends(
        n_scenes=params.get("scenes", 12),
        seed=params.get("seed", 0),
        size=params.get("size", 256),
        feature_size=params.get("feature_size", 64),
        channels=params.get("channels", 16),
        noise=params.get("noise", "small"),
    )
