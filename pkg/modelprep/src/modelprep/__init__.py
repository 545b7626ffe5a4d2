"""Model export and tensor-dump tooling for the zsas pipeline."""

__version__ = "0.1.0"

from .adapters import train_adapters
from .dump import dump_precomputed
from .export import ExportUnavailableError, export_scorer, export_segmenter
from .nets import ModelUnavailableError
from .recipe import ExportRecipe

__all__ = [
    "ExportRecipe",
    "ExportUnavailableError",
    "ModelUnavailableError",
    "dump_precomputed",
    "export_scorer",
    "export_segmenter",
    "train_adapters",
]
