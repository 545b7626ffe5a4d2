"""Backend contracts and implementations.

``ScorerBackend`` produces normalized anomaly maps; ``SegmenterBackend``
encodes images to feature grids and decodes prompt sets to candidate
masks. Three families ship with the package: a deterministic synthetic
oracle (testing), a file backend serving precomputed tensors, and a
serialized-graph inference backend.
"""

from .base import Candidate, ScorerBackend, SegmenterBackend
from .files import file_backend_load
from .synthetic import (
    SyntheticScene,
    SyntheticScorer,
    SyntheticSegmenter,
    generate_scenes,
    make_synthetic_backends,
    synthetic_decode,
)

__all__ = [
    "Candidate",
    "ScorerBackend",
    "SegmenterBackend",
    "SyntheticScene",
    "SyntheticScorer",
    "SyntheticSegmenter",
    "file_backend_load",
    "generate_scenes",
    "graph_backend_load",
    "make_synthetic_backends",
    "synthetic_decode",
]


def graph_backend_load(encoder_graph, decoder_graph, scorer_graph):
    """Load ONNX graphs as (scorer, segmenter) backends.

    Imported lazily so the core package works without onnxruntime.
    """
    from .graphs import graph_backend_load as _load

    return _load(encoder_graph, decoder_graph, scorer_graph)
