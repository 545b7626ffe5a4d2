"""Abstract backend contracts."""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import NamedTuple

from ..errors import BackendError
from ..types import BinaryMask, FeatureGrid, PromptSet, ScoreGrid


class Candidate(NamedTuple):
    """One decoder proposal: mask at working resolution, dense logit at
    the backend's logit resolution, and a confidence score."""

    mask: BinaryMask
    logit: ScoreGrid
    score: float


class ScorerBackend(ABC):
    """Produces a normalized anomaly map at ``native_resolution``."""

    name: str
    native_resolution: int

    @abstractmethod
    def score(self, image_ref: str) -> ScoreGrid:
        """Anomaly map for the referenced image, flagged normalized."""


class SegmenterBackend(ABC):
    """Promptable segmenter: encode once, decode per prompt set."""

    name: str
    working_resolution: int
    logit_resolution: int
    feature_dims: tuple[int, int, int]

    @abstractmethod
    def encode(self, image_ref: str) -> FeatureGrid:
        """Feature grid with shape ``feature_dims``."""

    @abstractmethod
    def decode(
        self, features: FeatureGrid, prompts: PromptSet, multimask: bool
    ) -> list[Candidate]:
        """At least one candidate; masks/logits at the declared sizes."""


def check_candidates(backend: SegmenterBackend, candidates: list[Candidate]) -> list[Candidate]:
    """Enforce the decode shape contract shared by every backend."""
    if not candidates:
        raise BackendError(f"{backend.name}: decode returned no candidates")
    w = backend.working_resolution
    lr = backend.logit_resolution
    for cand in candidates:
        if cand.mask.values.shape != (w, w):
            raise BackendError(
                f"{backend.name}: candidate mask {cand.mask.values.shape} != working ({w}, {w})"
            )
        if cand.logit.values.shape != (lr, lr):
            raise BackendError(
                f"{backend.name}: candidate logit {cand.logit.values.shape} != logit ({lr}, {lr})"
            )
    return candidates


def require_positive(prompts: PromptSet) -> None:
    if not prompts.has_positive():
        raise BackendError("decode requires at least one positive point prompt")
