"""Per-image orchestration: score, encode, mine prompts, cascade."""

from __future__ import annotations

from dataclasses import dataclass, replace

from .backends.base import ScorerBackend, SegmenterBackend
from .cascade import CascadeTrace, finalize_map, run_cascade
from .imgproc import minmax_normalize, resize_bilinear
from .prompts import PromptIntermediates, generate_prompts
from .types import PipelineConfig, PromptSet, ScoreGrid


@dataclass(frozen=True)
class PipelineResult:
    anomaly_map: ScoreGrid  # working resolution, min-max normalized
    prompts: PromptSet
    intermediates: PromptIntermediates
    trace: CascadeTrace

    @property
    def final_map(self) -> ScoreGrid:
        return self.trace.final_map


def effective_spacing(config: PipelineConfig, segmenter: SegmenterBackend) -> float:
    """Point spacing scaled from the configured working resolution to
    the segmenter's native working resolution."""
    return config.min_spacing * segmenter.working_resolution / config.working_resolution


def process_image(
    scorer: ScorerBackend,
    segmenter: SegmenterBackend,
    image_ref: str,
    config: PipelineConfig,
) -> PipelineResult:
    """Run the full two-stage pipeline on one image."""
    raw = scorer.score(image_ref)
    size = segmenter.working_resolution
    anomaly = minmax_normalize(resize_bilinear(raw, size, size))
    features = segmenter.encode(image_ref)
    mining_config = replace(config, min_spacing=effective_spacing(config, segmenter))
    prompts, intermediates = generate_prompts(anomaly, features, mining_config)
    trace = run_cascade(segmenter, features, prompts, config, anomaly=anomaly)
    return PipelineResult(anomaly, prompts, intermediates, trace)


def depth_maps(result: PipelineResult, config: PipelineConfig) -> list[ScoreGrid]:
    """Final output maps for every executed cascade depth, reusing the
    stage masks already in the trace (no extra decoding)."""
    return [
        finalize_map(mask, config, result.anomaly_map) for mask in result.trace.stage_masks
    ]
