"""Cascaded decoding: three decoder passes with progressively richer
hybrid prompts.

Stage 1 decodes the mined points alone with multiple candidate masks
and keeps the highest-scoring one. Stage 2 feeds the stage-1 dense
logit back alongside the same points (single-mask). Stage 3 derives a
bounding box around the stage-2 components anchored by positive points
— excluding spatially distant noise — and decodes points + box + the
stage-2 logit. The original point set is reused at every stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BackendError, ConfigError, DataError
from .imgproc import bounding_box, minmax_normalize, resize_bilinear
from .backends.base import SegmenterBackend
from .types import BinaryMask, Box, FeatureGrid, PipelineConfig, PromptSet, ScoreGrid


@dataclass(frozen=True)
class CascadeTrace:
    """Everything produced by one cascade run.

    Lists hold one entry per executed stage. ``derived_box`` is present
    exactly when stage 3 ran its box step; the empty-stage-2 fallback
    copies the stage-2 mask forward and sets ``degraded`` instead.
    """

    stage_masks: tuple[BinaryMask, ...]
    stage_logits: tuple[ScoreGrid, ...]
    stage_scores: tuple[float, ...]
    derived_box: Box | None
    final_map: ScoreGrid
    degraded: bool = False

    @property
    def depth(self) -> int:
        return len(self.stage_masks)


def run_stage(
    segmenter: SegmenterBackend,
    features: FeatureGrid,
    prompts: PromptSet,
    multimask: bool,
) -> tuple[BinaryMask, ScoreGrid, float]:
    """One decoder pass; picks the highest-scoring candidate (ties ->
    first)."""
    if not prompts.has_positive():
        raise DataError("run_stage requires at least one positive point")
    candidates = segmenter.decode(features, prompts, multimask)
    if not candidates:
        raise BackendError(f"{segmenter.name}: decode returned no candidates")
    best = int(np.argmax([c.score for c in candidates]))
    chosen = candidates[best]
    return chosen.mask, chosen.logit, chosen.score


def finalize_map(
    mask: BinaryMask, config: PipelineConfig, anomaly: ScoreGrid | None
) -> ScoreGrid:
    """Assemble the output map from the last-stage mask.

    Binary mode emits the mask as a 0/1 grid; blended mode mixes the
    mask with the (resized) anomaly map and re-normalizes.
    """
    if config.output_map_mode == "binary":
        return ScoreGrid(mask.values.astype(np.float32), normalized=True)
    if anomaly is None:
        raise ConfigError("blended output mode requires the anomaly map", field="output_map_mode")
    resized = resize_bilinear(anomaly, mask.height, mask.width)
    w = config.blend_weight
    blended = w * mask.values.astype(np.float64) + (1.0 - w) * resized.values.astype(np.float64)
    return minmax_normalize(ScoreGrid(blended.astype(np.float32)))


def run_cascade(
    segmenter: SegmenterBackend,
    features: FeatureGrid,
    prompts: PromptSet,
    config: PipelineConfig,
    anomaly: ScoreGrid | None = None,
) -> CascadeTrace:
    """Run up to ``config.cascade_depth`` decoder passes.

    ``prompts`` must be a points-only set (as produced by prompt
    mining); ``anomaly`` is only needed for the blended output mode.
    Backend failures propagate with the failing stage index attached.
    """
    if prompts.box is not None or prompts.dense_logit is not None:
        raise DataError("run_cascade expects a points-only prompt set")
    depth = config.cascade_depth

    masks: list[BinaryMask] = []
    logits: list[ScoreGrid] = []
    scores: list[float] = []
    box: Box | None = None
    degraded = False

    def stage(index: int, stage_prompts: PromptSet, multimask: bool) -> None:
        try:
            mask, logit, score = run_stage(segmenter, features, stage_prompts, multimask)
        except BackendError as exc:
            raise BackendError(f"cascade stage {index}: {exc}", stage=index) from exc
        masks.append(mask)
        logits.append(logit)
        scores.append(score)

    stage(1, prompts, multimask=True)
    if depth >= 2:
        stage(2, PromptSet(prompts.points, dense_logit=logits[0]), multimask=False)
    if depth >= 3:
        m2 = masks[1]
        if m2.is_empty():
            # No region to box; carry the stage-2 result forward.
            masks.append(m2)
            logits.append(logits[1])
            scores.append(scores[1])
            degraded = True
        else:
            box = bounding_box(m2, prompts.positives())
            stage(3, PromptSet(prompts.points, box=box, dense_logit=logits[1]), multimask=False)

    final = finalize_map(masks[-1], config, anomaly)
    return CascadeTrace(
        stage_masks=tuple(masks),
        stage_logits=tuple(logits),
        stage_scores=tuple(scores),
        derived_box=box,
        final_map=final,
        degraded=degraded,
    )
