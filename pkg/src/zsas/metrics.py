"""Pixel-level retrieval metrics: AUROC, F1-max, and average precision.

AUROC uses the Mann-Whitney formulation (ties count half). F1-max and
AP sweep every distinct score as a threshold with predictions defined
as ``score >= t`` and ties processed as a block, so binary score maps
(only values {0, 1}) are legal inputs and simply reduce the sweep to
two operating points.

The default dataset aggregate pools pixels across images; per-image
values are also reported so the aggregation choice stays auditable.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MetricError
from .types import BinaryMask, ScoreGrid

GridLike = ScoreGrid | list[ScoreGrid] | tuple[ScoreGrid, ...]
MaskLike = BinaryMask | list[BinaryMask] | tuple[BinaryMask, ...]


def _pool(scores: GridLike, truth: MaskLike) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(scores, ScoreGrid):
        scores = [scores]
    if isinstance(truth, BinaryMask):
        truth = [truth]
    if len(scores) != len(truth):
        raise MetricError(f"{len(scores)} score grids vs {len(truth)} truth masks")
    s_parts, t_parts = [], []
    for grid, mask in zip(scores, truth):
        if grid.values.shape != mask.values.shape:
            raise MetricError(
                f"score grid {grid.values.shape} does not match truth {mask.values.shape}"
            )
        s_parts.append(grid.values.reshape(-1).astype(np.float64))
        t_parts.append(mask.values.reshape(-1))
    return np.concatenate(s_parts), np.concatenate(t_parts)


def auroc(scores: GridLike, truth: MaskLike) -> float:
    """P(random positive outscores random negative), ties counted half."""
    s, t = _pool(scores, truth)
    pos = int(t.sum())
    neg = t.size - pos
    if pos == 0 or neg == 0:
        raise MetricError("AUROC is undefined for single-class truth")
    order = np.argsort(s, kind="stable")
    sorted_s = s[order]
    # Average ranks within tie groups (1-based midranks), vectorized.
    new_group = np.concatenate(([True], np.diff(sorted_s) != 0))
    group_id = np.cumsum(new_group) - 1
    counts = np.bincount(group_id)
    group_end = np.cumsum(counts)
    midrank = (group_end - counts + group_end + 1) / 2.0
    ranks = np.empty(s.size, dtype=np.float64)
    ranks[order] = midrank[group_id]
    rank_sum = ranks[t].sum()
    return float((rank_sum - pos * (pos + 1) / 2.0) / (pos * neg))


def _descending_blocks(s: np.ndarray, t: np.ndarray):
    """Cumulative (prefix_size, true_positives) at each distinct-score
    block boundary, scanning thresholds from high to low."""
    order = np.argsort(-s, kind="stable")
    sorted_s = s[order]
    sorted_t = t[order].astype(np.int64)
    cum_tp = np.cumsum(sorted_t)
    block_ends = np.concatenate((np.flatnonzero(np.diff(sorted_s)), [s.size - 1]))
    return block_ends + 1, cum_tp[block_ends]


def f1_max(scores: GridLike, truth: MaskLike) -> float:
    """Maximum F1 over all distinct-score thresholds (prediction = score >= t)."""
    s, t = _pool(scores, truth)
    pos = int(t.sum())
    if pos == 0:
        raise MetricError("F1-max is undefined without positive pixels")
    n, tp = _descending_blocks(s, t)
    f1 = 2.0 * tp / (n + pos)  # == 2PR/(P+R) with P=tp/n, R=tp/pos
    return float(f1.max())


def average_precision(scores: GridLike, truth: MaskLike) -> float:
    """Sum of (recall step) x (precision) over the descending-threshold
    precision/recall curve, ties processed as a block."""
    s, t = _pool(scores, truth)
    pos = int(t.sum())
    if pos == 0:
        raise MetricError("AP is undefined without positive pixels")
    n, tp = _descending_blocks(s, t)
    precision = tp / n
    recall = tp / pos
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(((recall - prev_recall) * precision).sum())


@dataclass(frozen=True)
class ImageMetrics:
    image_id: str
    auroc: float | None
    f1_max: float | None
    ap: float | None


@dataclass(frozen=True)
class EvalResult:
    """Pooled metrics plus per-image breakdown and pixel counts."""

    auroc: float
    f1_max: float
    ap: float
    per_image: tuple[ImageMetrics, ...]
    positive_pixels: int
    negative_pixels: int


def evaluate(
    image_ids: list[str], scores: list[ScoreGrid], truth: list[BinaryMask]
) -> EvalResult:
    """Pool pixels across the dataset and also compute per-image metrics.

    Per-image metrics that are undefined (e.g. defect-free images) are
    reported as None; the pooled values always use every pixel.
    """
    if not (len(image_ids) == len(scores) == len(truth)):
        raise MetricError("image_ids, scores, and truth must have equal lengths")
    if not image_ids:
        raise MetricError("cannot evaluate an empty dataset")
    per_image = []
    for image_id, grid, mask in zip(image_ids, scores, truth):
        row = {}
        for name, fn in (("auroc", auroc), ("f1_max", f1_max), ("ap", average_precision)):
            try:
                row[name] = fn(grid, mask)
            except MetricError:
                row[name] = None
        per_image.append(ImageMetrics(image_id, row["auroc"], row["f1_max"], row["ap"]))
    _, pooled_truth = _pool(scores, truth)
    return EvalResult(
        auroc=auroc(scores, truth),
        f1_max=f1_max(scores, truth),
        ap=average_precision(scores, truth),
        per_image=tuple(per_image),
        positive_pixels=int(pooled_truth.sum()),
        negative_pixels=int(pooled_truth.size - pooled_truth.sum()),
    )


def eval_to_dict(result: EvalResult) -> dict:
    return {
        "pooled": {"auroc": result.auroc, "f1_max": result.f1_max, "ap": result.ap},
        "pixel_counts": {
            "positives": result.positive_pixels,
            "negatives": result.negative_pixels,
        },
        "per_image": [
            {"image_id": m.image_id, "auroc": m.auroc, "f1_max": m.f1_max, "ap": m.ap}
            for m in result.per_image
        ],
    }


def write_eval_json(result: EvalResult, path: str | Path) -> None:
    Path(path).write_text(json.dumps(eval_to_dict(result), indent=2, sort_keys=True))


def write_eval_csv(result: EvalResult, path: str | Path) -> None:
    """One row per image plus one pooled row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "auroc", "f1_max", "ap"])
        for m in result.per_image:
            writer.writerow([m.image_id, _fmt(m.auroc), _fmt(m.f1_max), _fmt(m.ap)])
        writer.writerow(["POOLED", _fmt(result.auroc), _fmt(result.f1_max), _fmt(result.ap)])


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"
