"""Writers for the pipeline's tensor interchange formats.

Grids: raw little-endian float32, row-major, with a JSON sidecar
``<path>.json`` of ``{"dims": [...], "order": "row-major", "dtype":
"f32le"}`` (plus ``"normalized": true`` for unit-range score maps).
Written here independently so this package couples to the documented
format, not to the consumer's code.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image


def write_grid(values: np.ndarray, path: Path, normalized: bool = False) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(values, dtype="<f4")
    meta = {"dims": list(arr.shape), "order": "row-major", "dtype": "f32le"}
    if normalized:
        meta["normalized"] = True
    path.write_bytes(arr.tobytes(order="C"))
    path.with_name(path.name + ".json").write_text(json.dumps(meta, sort_keys=True))


def preprocess_image(path: Path, input_size: int, mean, std) -> np.ndarray:
    """RGB, bilinear resize to the graph input size, scale to [0,1],
    normalize channelwise. Matches the convention the graphs declare in
    their metadata."""
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((input_size, input_size), Image.BILINEAR)
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))[None]
