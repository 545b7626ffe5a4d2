"""From-scratch image-processing kernels.

Thresholding, min-max normalization, morphological dilation, connected
components, anchored bounding boxes, and bilinear resizing — everything
the prompt-mining and cascade stages need, implemented directly on
numpy arrays with no external vision library.

Conventions:
  - grids/masks are row-major with (y, x) indexing;
  - dilation clips the element footprint at image borders;
  - connected components use 8-connectivity, labeled in raster order of
    first encounter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, EmptyRegionError
from .types import BinaryMask, Box, PointPrompt, ScoreGrid, StructuringElement


@dataclass(frozen=True)
class ComponentLabels:
    """Result of connected-component labeling.

    ``labels`` holds 0 for background and 1..component_count for
    foreground, assigned in raster order of each component's first
    pixel. ``component_areas[i]`` is the pixel count of label i+1.
    """

    labels: np.ndarray
    component_count: int
    component_areas: tuple[int, ...]

    def __post_init__(self):
        arr = np.asarray(self.labels, dtype=np.int32)
        arr = arr.copy() if arr.flags.writeable else arr
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)
        object.__setattr__(self, "component_areas", tuple(int(a) for a in self.component_areas))

    def mask_of(self, label: int) -> np.ndarray:
        return self.labels == label


def minmax_normalize(grid: ScoreGrid) -> ScoreGrid:
    """Affinely map the grid onto [0, 1]; constant grids map to all zeros."""
    v = grid.values.astype(np.float64)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return ScoreGrid(np.zeros_like(v, dtype=np.float32), normalized=True)
    out = (v - lo) / (hi - lo)
    return ScoreGrid(out.astype(np.float32), normalized=True)


def binarize(grid: ScoreGrid, threshold: float) -> BinaryMask:
    """Pixel is foreground iff its value >= threshold (inclusive)."""
    if not grid.normalized:
        raise DataError("binarize requires a normalized grid")
    if not (0.0 <= threshold <= 1.0):
        raise ConfigError(f"threshold must lie in [0, 1], got {threshold}", field="extreme_threshold")
    return BinaryMask(grid.values >= np.float32(threshold))


def _check_element(mask: BinaryMask, element: StructuringElement) -> None:
    if element.width > 2 * mask.width or element.height > 2 * mask.height:
        raise ConfigError(
            f"kernel {element.width}x{element.height} exceeds 2x image size "
            f"{mask.width}x{mask.height}",
            field="kernel.size",
        )


def _footprint_runs(element: StructuringElement) -> list[tuple[int, int, int]] | None:
    """Per-row (dy, dx_lo, dx_hi) runs when every footprint row is
    contiguous (true for ellipse, rectangle, and cross)."""
    fp = element.footprint()
    cy = (element.height - 1) // 2
    cx = (element.width - 1) // 2
    runs = []
    for row_idx in range(fp.shape[0]):
        xs = np.flatnonzero(fp[row_idx])
        if xs.size == 0:
            continue
        if xs[-1] - xs[0] + 1 != xs.size:
            return None
        runs.append((row_idx - cy, int(xs[0]) - cx, int(xs[-1]) - cx))
    return runs


def dilate(mask: BinaryMask, element: StructuringElement) -> BinaryMask:
    """Morphological dilation: output pixel is true iff the element
    footprint centered there overlaps any input foreground pixel.

    The footprint is clipped at image borders. Each footprint row is a
    contiguous run, so the dilation is a union of row-shifted 1-D window
    unions, computed from a single column-wise prefix sum.
    """
    _check_element(mask, element)
    src = mask.values
    h, w = src.shape
    runs = _footprint_runs(element)
    out = np.zeros_like(src)
    if runs is None:  # non-contiguous rows: plain union of shifted copies
        for dy, dx in element.offsets():
            y0, y1 = max(0, -dy), min(h, h - dy)
            x0, x1 = max(0, -dx), min(w, w - dx)
            if y0 < y1 and x0 < x1:
                np.logical_or(
                    out[y0:y1, x0:x1],
                    src[y0 + dy : y1 + dy, x0 + dx : x1 + dx],
                    out=out[y0:y1, x0:x1],
                )
        return BinaryMask(out)

    prefix = np.zeros((h, w + 1), dtype=np.int32)
    np.cumsum(src, axis=1, out=prefix[:, 1:])
    cols = np.arange(w)
    row_dilated: dict[tuple[int, int], np.ndarray] = {}
    for dy, lo, hi in runs:
        band = row_dilated.get((lo, hi))
        if band is None:
            lo_idx = np.clip(cols + lo, 0, w)
            hi_idx = np.clip(cols + hi + 1, 0, w)
            band = (prefix[:, hi_idx] - prefix[:, lo_idx]) > 0
            row_dilated[(lo, hi)] = band
        y0, y1 = max(0, -dy), min(h, h - dy)
        if y0 < y1:
            np.logical_or(out[y0:y1], band[y0 + dy : y1 + dy], out=out[y0:y1])
    return BinaryMask(out)


def ring(mask: BinaryMask, element: StructuringElement) -> BinaryMask:
    """Dilation minus the input: the band immediately surrounding the
    foreground, always disjoint from it."""
    grown = dilate(mask, element)
    return BinaryMask(grown.values & ~mask.values)


def connected_components(mask: BinaryMask) -> ComponentLabels:
    """8-connected component labeling via run-based union-find."""
    src = mask.values
    h, w = src.shape
    labels = np.zeros((h, w), dtype=np.int32)

    parent: list[int] = []

    def find(i: int) -> int:
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    runs: list[tuple[int, int, int, int]] = []  # (row, start, end incl., set_id)
    prev: list[tuple[int, int, int]] = []  # (start, end, set_id) of previous row
    pad = np.zeros(w + 2, dtype=np.int8)
    for y in range(h):
        row = src[y]
        if not row.any():
            prev = []
            continue
        pad[1 : w + 1] = row
        edges = np.diff(pad)
        starts = np.flatnonzero(edges == 1)
        ends = np.flatnonzero(edges == -1) - 1
        cur: list[tuple[int, int, int]] = []
        for s, e in zip(starts, ends):
            sid = len(parent)
            parent.append(sid)
            # 8-connectivity: runs in the previous row touching [s-1, e+1]
            for ps, pe, pid in prev:
                if ps <= e + 1 and pe >= s - 1:
                    union(sid, pid)
            cur.append((int(s), int(e), sid))
            runs.append((y, int(s), int(e), sid))
        prev = cur

    # Relabel roots in raster order of first encounter.
    root_to_label: dict[int, int] = {}
    areas: list[int] = []
    for y, s, e, sid in runs:
        root = find(sid)
        label = root_to_label.get(root)
        if label is None:
            label = len(root_to_label) + 1
            root_to_label[root] = label
            areas.append(0)
        labels[y, s : e + 1] = label
        areas[label - 1] += e + 1 - s
    return ComponentLabels(labels, len(root_to_label), tuple(areas))


def bounding_box(mask: BinaryMask, anchors: list[PointPrompt] | tuple[PointPrompt, ...]) -> Box:
    """Tight box around the components that contain a positive anchor.

    Falls back to the largest-area component (ties -> lowest label) when
    no component contains a positive anchor.
    """
    if mask.is_empty():
        raise EmptyRegionError("bounding_box requires a non-empty mask")
    comps = connected_components(mask)
    anchored = sorted(
        {
            int(comps.labels[p.y, p.x])
            for p in anchors
            if p.is_positive and 0 <= p.y < mask.height and 0 <= p.x < mask.width
        }
        - {0}
    )
    if anchored:
        sel = np.isin(comps.labels, anchored)
    else:
        largest = int(np.argmax(comps.component_areas)) + 1
        sel = comps.labels == largest
    ys, xs = np.nonzero(sel)
    return Box(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def resize_bilinear(grid: ScoreGrid, out_h: int, out_w: int) -> ScoreGrid:
    """Bilinear resize with pixel-center sampling.

    Output pixel centers are mapped uniformly onto the source center
    span: ``src = (dst + 0.5) * (in_size - 1) / out_size``, so samples
    always fall inside the source grid and interpolation is convex (no
    overshoot). Identical dimensions return the input unchanged. The
    model-export tooling must match this convention when aligning maps.
    """
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"resize dimensions must be >= 1, got {out_h}x{out_w}")
    in_h, in_w = grid.values.shape
    if (out_h, out_w) == (in_h, in_w):
        return grid
    v = grid.values.astype(np.float64)
    sy = (np.arange(out_h) + 0.5) * (in_h - 1) / out_h
    sx = (np.arange(out_w) + 0.5) * (in_w - 1) / out_w
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (sy - y0)[:, None]
    wx = (sx - x0)[None, :]
    out = (
        v[np.ix_(y0, x0)] * (1 - wy) * (1 - wx)
        + v[np.ix_(y0, x1)] * (1 - wy) * wx
        + v[np.ix_(y1, x0)] * wy * (1 - wx)
        + v[np.ix_(y1, x1)] * wy * wx
    )
    return ScoreGrid(out.astype(np.float32), normalized=grid.normalized)


def scale_coord(v: int, from_size: int, to_size: int) -> int:
    """Map a pixel index between resolutions by pixel-center containment.

    The result is the index of the target pixel whose cell contains the
    source pixel's center; the same formula is used for nearest-neighbor
    mask resizing so point/mask mappings round-trip consistently.
    """
    return int((v + 0.5) * to_size / from_size)


def resize_mask_nearest(mask: BinaryMask, out_h: int, out_w: int) -> BinaryMask:
    """Nearest-neighbor mask resize using the ``scale_coord`` convention.

    Every output foreground pixel samples an input foreground pixel, so
    points mapped back via ``scale_coord`` are guaranteed to land inside
    the original mask.
    """
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"resize dimensions must be >= 1, got {out_h}x{out_w}")
    in_h, in_w = mask.values.shape
    if (out_h, out_w) == (in_h, in_w):
        return mask
    ys = ((np.arange(out_h) + 0.5) * in_h / out_h).astype(np.int64)
    xs = ((np.arange(out_w) + 0.5) * in_w / out_w).astype(np.int64)
    return BinaryMask(mask.values[np.ix_(ys, xs)])
