"""Export recipes: what to export, from where, with which constants."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

DEFAULT_TAPPED_LAYERS = (6, 12, 18, 24)
DEFAULT_MEAN = (0.485, 0.456, 0.406)
DEFAULT_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class ExportRecipe:
    """Everything needed to build and serialize the scorer and segmenter.

    ``scorer_model`` / ``segmenter_model`` name either the bundled
    lightweight reference models ("reference-tiny") or an external model
    id whose weights must be available locally. ``tapped_layers`` are
    the encoder depths whose patch embeddings feed the scorer's linear
    adapters; ``adapter_checkpoint`` is optional — export proceeds
    without it and the scorer graph is flagged ``unaligned``.
    """

    out_dir: Path
    scorer_model: str = "reference-tiny"
    segmenter_model: str = "reference-tiny"
    tapped_layers: tuple[int, ...] = DEFAULT_TAPPED_LAYERS
    adapter_checkpoint: Path | None = None
    input_size: int = 256
    mean: tuple[float, float, float] = DEFAULT_MEAN
    std: tuple[float, float, float] = DEFAULT_STD
    graph_format: str = "onnx"  # "onnx" | "torchscript"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if self.adapter_checkpoint is not None:
            object.__setattr__(self, "adapter_checkpoint", Path(self.adapter_checkpoint))
        if self.graph_format not in ("onnx", "torchscript"):
            raise ValueError(f"graph_format must be onnx or torchscript, got {self.graph_format!r}")
        if not self.tapped_layers:
            raise ValueError("tapped_layers must not be empty")
        if self.input_size % 4 != 0:
            raise ValueError("input_size must be a multiple of 4")

    @property
    def suffix(self) -> str:
        return ".onnx" if self.graph_format == "onnx" else ".pt"

    def path(self, name: str) -> Path:
        return self.out_dir / f"{name}{self.suffix}"
