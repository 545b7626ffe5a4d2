"""File formats for grids, masks, and configs.

Grids are stored as raw little-endian float32, row-major, with a JSON
sidecar ``<path>.json`` of the form ``{"dims": [...], "order":
"row-major", "dtype": "f32le"}``. Masks are 8-bit single-channel PNGs
with 0 = background and 255 = foreground.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .types import BinaryMask, FeatureGrid, PipelineConfig, ScoreGrid, config_from_dict, config_to_dict


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_grid(grid: ScoreGrid | FeatureGrid, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "dims": list(grid.values.shape),
        "order": "row-major",
        "dtype": "f32le",
    }
    if isinstance(grid, ScoreGrid) and grid.normalized:
        meta["normalized"] = True
    path.write_bytes(grid.values.astype("<f4", copy=False).tobytes(order="C"))
    _sidecar(path).write_text(json.dumps(meta, sort_keys=True))


def _load_raw(path: Path, expect_ndim: int) -> tuple[np.ndarray, dict]:
    if not path.exists():
        raise DataError(f"grid file not found: {path}")
    sidecar = _sidecar(path)
    if not sidecar.exists():
        raise DataError(f"missing sidecar for grid file: {sidecar}")
    meta = json.loads(sidecar.read_text())
    if meta.get("dtype") != "f32le" or meta.get("order") != "row-major":
        raise DataError(f"unsupported grid encoding in {sidecar}: {meta}")
    dims = meta.get("dims", [])
    if len(dims) != expect_ndim:
        raise DataError(f"{path} has {len(dims)} dims, expected {expect_ndim}")
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    expected = int(np.prod(dims))
    if data.size != expected:
        raise DataError(f"{path}: {data.size} values on disk, sidecar declares {expected}")
    return data.reshape(dims), meta


def load_score_grid(path: str | Path) -> ScoreGrid:
    data, meta = _load_raw(Path(path), 2)
    return ScoreGrid(data, normalized=bool(meta.get("normalized", False)))


def load_feature_grid(path: str | Path) -> FeatureGrid:
    data, _ = _load_raw(Path(path), 3)
    return FeatureGrid(data)


def save_mask(mask: BinaryMask, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img = Image.fromarray(np.where(mask.values, 255, 0).astype(np.uint8), mode="L")
    img.save(path, format="PNG")


def load_mask(path: str | Path) -> BinaryMask:
    path = Path(path)
    if not path.exists():
        raise DataError(f"mask file not found: {path}")
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return BinaryMask(arr > 0)


def save_config(config: PipelineConfig, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config_to_dict(config), indent=2, sort_keys=True))


def load_config(path: str | Path) -> PipelineConfig:
    return config_from_dict(json.loads(Path(path).read_text()))
