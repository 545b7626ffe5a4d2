"""MVTec-style dataset indexing.

Layout: ``<root>/<category>/test/<defect>/<name>.png`` with ground
truth at ``<root>/<category>/ground_truth/<defect>/<name>_mask.png``.
Images under a ``good`` defect directory have no mask and evaluate as
all-negative truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError
from .io import load_mask
from .types import BinaryMask


@dataclass(frozen=True)
class DatasetEntry:
    category: str
    defect: str
    image_path: Path
    mask_path: Path | None

    @property
    def image_id(self) -> str:
        return f"{self.category}/{self.defect}/{self.image_path.stem}"


@dataclass(frozen=True)
class DatasetIndex:
    root: Path
    entries: tuple[DatasetEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)


def index_dataset(root: str | Path) -> DatasetIndex:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root is not a directory: {root}")
    entries: list[DatasetEntry] = []
    for category_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        test_dir = category_dir / "test"
        if not test_dir.is_dir():
            continue
        for defect_dir in sorted(p for p in test_dir.iterdir() if p.is_dir()):
            defect = defect_dir.name
            for image_path in sorted(defect_dir.glob("*.png")):
                if defect == "good":
                    mask_path = None
                else:
                    mask_path = (
                        category_dir / "ground_truth" / defect / f"{image_path.stem}_mask.png"
                    )
                    if not mask_path.exists():
                        raise DatasetError(f"missing ground-truth mask: {mask_path}")
                entries.append(DatasetEntry(category_dir.name, defect, image_path, mask_path))
    if not entries:
        raise DatasetError(f"no test images found under {root}")
    return DatasetIndex(root, tuple(entries))


def load_truth(entry: DatasetEntry, height: int, width: int) -> BinaryMask:
    """Ground-truth mask for an entry; all-negative for good images."""
    if entry.mask_path is None:
        return BinaryMask(np.zeros((height, width), dtype=bool))
    mask = load_mask(entry.mask_path)
    if mask.values.shape != (height, width):
        # Predictions live at working resolution; align the truth to it.
        from .imgproc import resize_mask_nearest

        mask = resize_mask_nearest(mask, height, width)
    return mask
