"""Point-prompt mining from anomaly maps and encoder features.

Positive points are the top anomaly scores inside the extreme-anomaly
region (the thresholded map), greedily selected with a minimum spacing.
Negative points come from the dilation ring around that region: each
ring cell's encoder feature is scored by cosine similarity against the
mean feature of the extreme region, and the least similar cells are
selected. Both point sets are concatenated into a single prompt set.

Negative mining runs at the encoder's feature resolution; spacing is
scaled by the resolution ratio and selected cells are mapped back to
working-resolution pixel coordinates with the same pixel-center
convention used for mask downsampling, which guarantees every negative
lands inside the working-resolution ring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DegenerateFeatureError, EmptyRegionError
from .imgproc import binarize, resize_mask_nearest, ring, scale_coord
from .types import BinaryMask, FeatureGrid, PipelineConfig, PointPrompt, PromptSet, ScoreGrid

# Similarity value assigned outside the ring so lowest-k never selects there.
SIMILARITY_SENTINEL = 1.0


@dataclass(frozen=True)
class PromptIntermediates:
    """Intermediate artifacts of prompt generation, kept for debugging.

    ``masked_anomaly`` is zero outside the extreme region; ``similarity``
    holds cosine values on ring cells and the sentinel +1 elsewhere.
    ``degraded`` marks the empty-extreme-region fallback (single global
    argmax positive, no negatives).
    """

    extreme_mask: BinaryMask
    masked_anomaly: ScoreGrid
    ring_mask: BinaryMask
    similarity: ScoreGrid
    degraded: bool = False


def masked_anomaly(extreme_mask: BinaryMask, anomaly: ScoreGrid) -> ScoreGrid:
    """Elementwise product of the mask (as 0/1) with the anomaly map."""
    if extreme_mask.values.shape != anomaly.values.shape:
        raise DataError(
            f"mask {extreme_mask.values.shape} does not match anomaly {anomaly.values.shape}"
        )
    return ScoreGrid(anomaly.values * extreme_mask.values, normalized=anomaly.normalized)


def select_spaced_topk(
    grid: ScoreGrid,
    k: int,
    min_spacing: float,
    order: str = "highest",
    domain: BinaryMask | None = None,
    polarity: str = "positive",
) -> list[PointPrompt]:
    """Greedy spaced selection of extreme-valued pixels.

    Repeatedly takes the best remaining pixel (within ``domain`` when
    given) whose Euclidean distance to every already-selected point is
    >= ``min_spacing``, stopping early when no pixel qualifies. Ties
    break in raster order (smaller y, then smaller x). Points are
    returned in selection order.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if order not in ("highest", "lowest"):
        raise ConfigError(f"order must be 'highest' or 'lowest', got {order!r}")
    if domain is not None:
        if domain.values.shape != grid.values.shape:
            raise DataError(
                f"domain {domain.values.shape} does not match grid {grid.values.shape}"
            )
        if domain.is_empty():
            raise EmptyRegionError("selection domain has no foreground pixels")
        flat_idx = np.flatnonzero(domain.values.reshape(-1))
    else:
        flat_idx = np.arange(grid.values.size)
    vals = grid.values.reshape(-1)[flat_idx].astype(np.float64)
    # flat_idx is raster-ordered, so a stable sort yields raster tie-breaks.
    sort = np.argsort(vals if order == "lowest" else -vals, kind="stable")
    width = grid.width
    selected: list[PointPrompt] = []
    sel_xy: list[tuple[int, int]] = []
    for j in sort:
        idx = flat_idx[j]
        y, x = divmod(int(idx), width)
        if all(np.hypot(x - sx, y - sy) >= min_spacing for sx, sy in sel_xy):
            selected.append(PointPrompt(x=x, y=y, polarity=polarity, score=float(vals[j])))
            sel_xy.append((x, y))
            if len(selected) == k:
                break
    return selected


def region_prototype(features: FeatureGrid, mask: BinaryMask) -> np.ndarray:
    """Channelwise mean feature over the mask foreground (float64)."""
    if (features.height, features.width) != (mask.height, mask.width):
        raise DataError(
            f"mask {mask.values.shape} does not match feature grid "
            f"{(features.height, features.width)}"
        )
    if mask.is_empty():
        raise EmptyRegionError("region_prototype requires a non-empty mask")
    fg = features.values[:, mask.values].astype(np.float64)
    return fg.mean(axis=1)


def similarity_map(features: FeatureGrid, ring_mask: BinaryMask, prototype: np.ndarray) -> ScoreGrid:
    """Cosine similarity of every ring cell's feature to the prototype.

    Cells outside the ring get the sentinel +1; zero-norm feature
    vectors score 0.
    """
    if (features.height, features.width) != (ring_mask.height, ring_mask.width):
        raise DataError("ring mask must be at feature resolution")
    prototype = np.asarray(prototype, dtype=np.float64)
    if prototype.shape != (features.channels,):
        raise DataError(
            f"prototype length {prototype.shape} does not match channels {features.channels}"
        )
    p_norm = np.linalg.norm(prototype)
    if p_norm == 0.0:
        raise DegenerateFeatureError("prototype vector is all-zero")
    out = np.full((features.height, features.width), SIMILARITY_SENTINEL, dtype=np.float64)
    sel = ring_mask.values
    if sel.any():
        vecs = features.values[:, sel].astype(np.float64)
        norms = np.linalg.norm(vecs, axis=0)
        dots = prototype @ vecs
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = np.where(norms > 0.0, dots / (norms * p_norm), 0.0)
        out[sel] = np.clip(cos, -1.0, 1.0)
    return ScoreGrid(out.astype(np.float32))


def generate_prompts(
    anomaly: ScoreGrid, features: FeatureGrid, config: PipelineConfig
) -> tuple[PromptSet, PromptIntermediates]:
    """Run the full prompt-mining pipeline for one image.

    When no pixel reaches the extreme threshold the result degrades to a
    single global-argmax positive point with no negatives (flagged in
    the intermediates) so downstream segmentation always has a prompt.
    """
    if not anomaly.normalized:
        raise DataError("generate_prompts requires a normalized anomaly map")
    h, w = anomaly.height, anomaly.width
    fh, fw = features.height, features.width

    extreme = binarize(anomaly, config.extreme_threshold)
    sentinel_sim = ScoreGrid(np.full((fh, fw), SIMILARITY_SENTINEL, dtype=np.float32))
    if extreme.is_empty():
        top = select_spaced_topk(anomaly, 1, 0.0, "highest", polarity="positive")
        inter = PromptIntermediates(
            extreme_mask=extreme,
            masked_anomaly=ScoreGrid(np.zeros((h, w), dtype=np.float32), normalized=True),
            ring_mask=BinaryMask(np.zeros((h, w), dtype=bool)),
            similarity=sentinel_sim,
            degraded=True,
        )
        return PromptSet(points=tuple(top)), inter

    scored = masked_anomaly(extreme, anomaly)
    positives = select_spaced_topk(
        scored, config.k_positive, config.min_spacing, "highest", domain=extreme, polarity="positive"
    )

    ring_mask = ring(extreme, config.kernel)
    extreme_f = resize_mask_nearest(extreme, fh, fw)
    if extreme_f.is_empty():
        # Downsampling can wipe out a tiny region; fall back to the cell
        # holding the strongest positive point.
        fallback = np.zeros((fh, fw), dtype=bool)
        fallback[scale_coord(positives[0].y, h, fh), scale_coord(positives[0].x, w, fw)] = True
        extreme_f = BinaryMask(fallback)
    ring_f = resize_mask_nearest(ring_mask, fh, fw)

    negatives: list[PointPrompt] = []
    similarity = sentinel_sim
    if config.k_negative > 0 and not ring_f.is_empty():
        prototype = region_prototype(features, extreme_f)
        similarity = similarity_map(features, ring_f, prototype)
        scaled_spacing = config.min_spacing * fw / w
        low = select_spaced_topk(
            similarity, config.k_negative, scaled_spacing, "lowest", domain=ring_f,
            polarity="negative",
        )
        negatives = [
            PointPrompt(
                x=scale_coord(p.x, fw, w), y=scale_coord(p.y, fh, h),
                polarity="negative", score=p.score,
            )
            for p in low
        ]

    for p in positives:
        assert extreme.values[p.y, p.x], "positive point escaped the extreme region"
    for p in negatives:
        assert ring_mask.values[p.y, p.x], "negative point escaped the ring"

    inter = PromptIntermediates(
        extreme_mask=extreme,
        masked_anomaly=scored,
        ring_mask=ring_mask,
        similarity=similarity,
        degraded=False,
    )
    return PromptSet(points=tuple(positives) + tuple(negatives)), inter
