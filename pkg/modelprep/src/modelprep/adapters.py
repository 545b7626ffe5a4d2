"""Optional adapter training for the scorer.

Trains only the per-stage 1x1-conv adapters with Adam at a fixed 1e-3
learning rate and batch size 16 against pixel annotations from an
MVTec-style dataset tree; defaults to 15 epochs for MVTec-AD-style
roots and 3 otherwise. Best-effort: the segmentation pipeline never
depends on this step.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import nn

from .formats import preprocess_image
from .nets import build_scorer
from .recipe import ExportRecipe


def find_annotated_images(dataset_root: Path) -> list[tuple[Path, Path]]:
    """(image, mask) pairs from an MVTec-style tree, defect images only."""
    pairs = []
    for image_path in sorted(Path(dataset_root).glob("*/test/*/*.png")):
        defect = image_path.parent.name
        if defect == "good":
            continue
        category_dir = image_path.parent.parent.parent
        mask_path = category_dir / "ground_truth" / defect / f"{image_path.stem}_mask.png"
        if mask_path.exists():
            pairs.append((image_path, mask_path))
    return pairs


def default_epochs(dataset_root: Path) -> int:
    return 15 if "mvtec" in Path(dataset_root).name.lower() else 3


def train_adapters(
    recipe: ExportRecipe,
    dataset_root: Path,
    checkpoint_path: Path,
    epochs: int | None = None,
    batch_size: int = 16,
    learning_rate: float = 1e-3,
) -> list[float]:
    """Returns the per-epoch mean loss; saves the adapter state dict."""
    pairs = find_annotated_images(dataset_root)
    if not pairs:
        raise ValueError(f"no annotated defect images under {dataset_root}")
    epochs = default_epochs(dataset_root) if epochs is None else epochs

    scorer = build_scorer(recipe).train()
    for p in scorer.parameters():
        p.requires_grad_(False)
    params = list(scorer.adapter_parameters())
    for p in params:
        p.requires_grad_(True)
    optimizer = torch.optim.Adam(params, lr=learning_rate)
    loss_fn = nn.BCEWithLogitsLoss()
    size = recipe.input_size

    def load_pair(image_path: Path, mask_path: Path):
        x = preprocess_image(image_path, size, recipe.mean, recipe.std)[0]
        with Image.open(mask_path) as img:
            mask = img.convert("L").resize((size, size), Image.NEAREST)
        y = (np.asarray(mask) > 0).astype(np.float32)[None]
        return torch.from_numpy(x), torch.from_numpy(y)

    history: list[float] = []
    for _ in range(epochs):
        losses = []
        for start in range(0, len(pairs), batch_size):
            batch = pairs[start : start + batch_size]
            xs, ys = zip(*(load_pair(i, m) for i, m in batch))
            x = torch.stack(xs)
            y = torch.stack(ys)
            optimizer.zero_grad()
            logits = scorer.stage_logits(x)
            loss = loss_fn(logits, y)
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        history.append(float(np.mean(losses)))

    checkpoint_path = Path(checkpoint_path)
    checkpoint_path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(scorer.adapter_state(), checkpoint_path)
    return history
