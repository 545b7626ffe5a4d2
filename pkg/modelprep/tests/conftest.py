import numpy as np
import pytest
from PIL import Image


def write_defect_image(path, size=256, seed=0, defect=True):
    """Gray textured field with (optionally) a bright square defect.

    Returns the ground-truth defect mask.
    """
    rng = np.random.default_rng(seed)
    img = (rng.normal(120, 6, size=(size, size, 3))).clip(0, 255).astype(np.uint8)
    mask = np.zeros((size, size), dtype=bool)
    if defect:
        y0 = size // 4 + int(rng.integers(0, size // 8))
        x0 = size // 4 + int(rng.integers(0, size // 8))
        side = size // 6
        img[y0 : y0 + side, x0 : x0 + side] = (230, 235, 228)
        mask[y0 : y0 + side, x0 : x0 + side] = True
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img, mode="RGB").save(path, format="PNG")
    return mask


def write_mask(path, mask):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path, format="PNG")


@pytest.fixture
def defect_images(tmp_path):
    """Five defect PNGs plus their truth masks."""
    paths = []
    for i in range(5):
        path = tmp_path / "images" / f"sample_{i}.png"
        write_defect_image(path, seed=100 + i)
        paths.append(path)
    return paths


def onnx_available() -> bool:
    try:
        import onnx  # noqa: F401
        import onnxruntime  # noqa: F401

        return True
    except ImportError:
        return False


needs_onnx = pytest.mark.skipif(
    not onnx_available(),
    reason="onnx/onnxruntime unavailable in this environment "
    "(verified absent from the package mirror); the TorchScript route "
    "covers the serialized-graph round trip here",
)
