"""Zero-shot anomaly segmentation.

Two-stage pipeline over pluggable backends: mine positive/negative
point prompts from an anomaly map and encoder features, then refine a
promptable segmenter's mask through a three-pass prompt cascade
(points, +dense logit, +bounding box). Includes pixel-level evaluation
(AUROC / F1-max / AP) and ablation harnesses.
"""

__version__ = "0.1.0"

from .cascade import CascadeTrace, run_cascade, run_stage
from .errors import (
    BackendError,
    ConfigError,
    DataError,
    DatasetError,
    DegenerateFeatureError,
    EmptyRegionError,
    MetricError,
    SignatureError,
    ZsasError,
)
from .metrics import EvalResult, auroc, average_precision, evaluate, f1_max
from .pipeline import PipelineResult, process_image
from .prompts import PromptIntermediates, generate_prompts, select_spaced_topk
from .types import (
    BinaryMask,
    Box,
    FeatureGrid,
    PipelineConfig,
    PointPrompt,
    PromptSet,
    ScoreGrid,
    StructuringElement,
    validate_config,
)

__all__ = [
    "BackendError",
    "BinaryMask",
    "Box",
    "CascadeTrace",
    "ConfigError",
    "DataError",
    "DatasetError",
    "DegenerateFeatureError",
    "EmptyRegionError",
    "EvalResult",
    "FeatureGrid",
    "MetricError",
    "PipelineConfig",
    "PipelineResult",
    "PointPrompt",
    "PromptIntermediates",
    "PromptSet",
    "ScoreGrid",
    "SignatureError",
    "StructuringElement",
    "ZsasError",
    "auroc",
    "average_precision",
    "evaluate",
    "f1_max",
    "generate_prompts",
    "process_image",
    "run_cascade",
    "run_stage",
    "select_spaced_topk",
    "validate_config",
]
