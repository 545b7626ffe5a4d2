"""Core data model: score grids, masks, feature grids, prompts, and config.

All grid types are immutable after construction (backing arrays are
marked read-only) and use row-major ``(y, x)`` indexing throughout the
package. Invariant violations are rejected at construction; the only
documented silent normalization is the round-up of even structuring
element sizes to the next odd size.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError

KERNEL_SHAPES = ("ellipse", "rectangle", "cross")
OUTPUT_MAP_MODES = ("binary", "blended")
POLARITIES = ("positive", "negative")


def _freeze(values, dtype, ndim: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    if arr.ndim != ndim:
        raise DataError(f"{what} must be {ndim}-dimensional, got shape {arr.shape}")
    if any(s < 1 for s in arr.shape):
        raise DataError(f"{what} dimensions must be >= 1, got shape {arr.shape}")
    if not arr.flags.c_contiguous or arr.flags.writeable:
        arr = np.ascontiguousarray(arr).copy()
    arr.setflags(write=False)
    return arr


class _ArrayEq:
    """Value equality for array-backed types (bitwise on the buffer)."""

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        if self.values.shape != other.values.shape:
            return False
        if self.values.tobytes() != other.values.tobytes():
            return False
        return all(
            getattr(self, f) == getattr(other, f)
            for f in self.__dataclass_fields__
            if f != "values"
        )

    def __hash__(self):
        return hash((type(self).__name__, self.values.shape, self.values.tobytes()))


@dataclass(frozen=True, eq=False)
class ScoreGrid(_ArrayEq):
    """An H x W grid of real-valued per-pixel scores.

    When ``normalized`` is set, every value must lie in [0, 1].
    """

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        arr = _freeze(self.values, np.float32, 2, "ScoreGrid")
        if not np.isfinite(arr).all():
            raise DataError("ScoreGrid values must be finite")
        if self.normalized and (arr.min() < 0.0 or arr.max() > 1.0):
            raise DataError("normalized ScoreGrid values must lie in [0, 1]")
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class BinaryMask(_ArrayEq):
    """An H x W boolean grid; True marks foreground."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _freeze(self.values, np.bool_, 2, "BinaryMask"))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def foreground_count(self) -> int:
        return int(self.values.sum())

    def is_empty(self) -> bool:
        return not self.values.any()


@dataclass(frozen=True, eq=False)
class FeatureGrid(_ArrayEq):
    """A C x h x w grid of feature vectors (one per spatial cell)."""

    values: np.ndarray

    def __post_init__(self):
        arr = _freeze(self.values, np.float32, 3, "FeatureGrid")
        if not np.isfinite(arr).all():
            raise DataError("FeatureGrid values must be finite")
        object.__setattr__(self, "values", arr)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def vector_at(self, y: int, x: int) -> np.ndarray:
        return self.values[:, y, x]


@dataclass(frozen=True)
class PointPrompt:
    """A labeled point prompt: pixel location, polarity, and the score
    that ranked it during selection."""

    x: int
    y: int
    polarity: str
    score: float

    def __post_init__(self):
        if self.polarity not in POLARITIES:
            raise DataError(f"polarity must be one of {POLARITIES}, got {self.polarity!r}")
        if self.x < 0 or self.y < 0:
            raise DataError(f"point coordinates must be non-negative, got ({self.x}, {self.y})")

    @property
    def is_positive(self) -> bool:
        return self.polarity == "positive"


@dataclass(frozen=True)
class Box:
    """Axis-aligned inclusive pixel box."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise DataError(f"degenerate box ({self.x_min},{self.y_min},{self.x_max},{self.y_max})")
        if min(self.x_min, self.y_min) < 0:
            raise DataError("box coordinates must be non-negative")

    def contains(self, x: int, y: int) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def rasterize(self, height: int, width: int) -> np.ndarray:
        """Boolean H x W array that is True inside the box."""
        out = np.zeros((height, width), dtype=bool)
        out[self.y_min : self.y_max + 1, self.x_min : self.x_max + 1] = True
        return out


@dataclass(frozen=True)
class PromptSet:
    """Points plus an optional box and optional dense low-resolution logit.

    Segmenter backends require at least one positive point; that is
    checked at decode time, not at construction, so partially built sets
    can be assembled incrementally.
    """

    points: tuple[PointPrompt, ...]
    box: Box | None = None
    dense_logit: ScoreGrid | None = None

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))

    def positives(self) -> tuple[PointPrompt, ...]:
        return tuple(p for p in self.points if p.is_positive)

    def negatives(self) -> tuple[PointPrompt, ...]:
        return tuple(p for p in self.points if not p.is_positive)

    def has_positive(self) -> bool:
        return any(p.is_positive for p in self.points)


@dataclass(frozen=True)
class StructuringElement:
    """Shaped neighborhood for morphological dilation.

    Sizes are normalized to odd values (even inputs round UP) so the
    element always has a center pixel. The footprint always contains its
    center.
    """

    shape: str = "ellipse"
    width: int = 25
    height: int = 25

    def __post_init__(self):
        if self.shape not in KERNEL_SHAPES:
            raise ConfigError(
                f"kernel.shape must be one of {KERNEL_SHAPES}, got {self.shape!r}",
                field="kernel.shape",
            )
        for name in ("width", "height"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(
                    f"kernel.size must be >= 1 in both dimensions, got {name}={v}",
                    field="kernel.size",
                )
            if v % 2 == 0:
                object.__setattr__(self, name, int(v) + 1)
            else:
                object.__setattr__(self, name, int(v))

    @classmethod
    def of(cls, shape: str, size: tuple[int, int] | int) -> "StructuringElement":
        if isinstance(size, (int, np.integer)):
            size = (int(size), int(size))
        if len(size) != 2:
            raise ConfigError(f"kernel.size must be (width, height), got {size!r}", field="kernel.size")
        return cls(shape=shape, width=size[0], height=size[1])

    def footprint(self) -> np.ndarray:
        """Boolean (height, width) array of the element footprint."""
        a = (self.width - 1) // 2
        b = (self.height - 1) // 2
        dy, dx = np.mgrid[-b : b + 1, -a : a + 1]
        if self.shape == "rectangle":
            fp = np.ones(dy.shape, dtype=bool)
        elif self.shape == "cross":
            fp = (dy == 0) | (dx == 0)
        else:  # ellipse
            tx = (dx / a) ** 2 if a > 0 else np.zeros(dx.shape)
            ty = (dy / b) ** 2 if b > 0 else np.zeros(dy.shape)
            fp = tx + ty <= 1.0
        return fp

    def offsets(self) -> np.ndarray:
        """Footprint offsets as an (n, 2) array of (dy, dx), center included."""
        fp = self.footprint()
        ys, xs = np.nonzero(fp)
        return np.stack([ys - (self.height - 1) // 2, xs - (self.width - 1) // 2], axis=1)


@dataclass(frozen=True)
class PipelineConfig:
    """Tunable parameters of the full segmentation pipeline.

    ``min_spacing`` is interpreted at ``working_resolution``; backends
    running at a different native size scale it proportionally.
    """

    extreme_threshold: float = 0.5
    k_positive: int = 3
    k_negative: int = 3
    min_spacing: float = 400.0
    kernel: StructuringElement = field(default_factory=StructuringElement)
    cascade_depth: int = 3
    working_resolution: int = 1024
    output_map_mode: str = "binary"
    blend_weight: float = 0.5


def validate_config(config: PipelineConfig) -> PipelineConfig:
    """Check every config invariant and return a normalized config.

    Kernel sizes are normalized to odd values and the blend weight is
    clamped into [0, 1] (both documented normalizations); any other
    violation raises a :class:`ConfigError` naming the offending field.
    """
    if not (0.0 < config.extreme_threshold < 1.0):
        raise ConfigError(
            f"extreme_threshold must lie in (0, 1), got {config.extreme_threshold}",
            field="extreme_threshold",
        )
    if config.k_positive < 1:
        raise ConfigError(f"k_positive must be >= 1, got {config.k_positive}", field="k_positive")
    if config.k_negative < 0:
        raise ConfigError(f"k_negative must be >= 0, got {config.k_negative}", field="k_negative")
    if config.min_spacing < 0:
        raise ConfigError(f"min_spacing must be >= 0, got {config.min_spacing}", field="min_spacing")
    if config.working_resolution < 64:
        raise ConfigError(
            f"working_resolution must be >= 64, got {config.working_resolution}",
            field="working_resolution",
        )
    if config.cascade_depth not in (1, 2, 3):
        raise ConfigError(
            f"cascade_depth must be 1, 2 or 3, got {config.cascade_depth}", field="cascade_depth"
        )
    if config.output_map_mode not in OUTPUT_MAP_MODES:
        raise ConfigError(
            f"output_map_mode must be one of {OUTPUT_MAP_MODES}, got {config.output_map_mode!r}",
            field="output_map_mode",
        )
    if not isinstance(config.kernel, StructuringElement):
        raise ConfigError("kernel must be a StructuringElement", field="kernel")
    # Re-construct to apply the odd-size normalization to hand-built configs.
    kernel = StructuringElement(config.kernel.shape, config.kernel.width, config.kernel.height)
    blend = min(1.0, max(0.0, float(config.blend_weight)))
    return replace(config, kernel=kernel, blend_weight=blend)


def config_to_dict(config: PipelineConfig) -> dict:
    return {
        "extreme_threshold": config.extreme_threshold,
        "k_positive": config.k_positive,
        "k_negative": config.k_negative,
        "min_spacing": config.min_spacing,
        "kernel": {
            "shape": config.kernel.shape,
            "size": [config.kernel.width, config.kernel.height],
        },
        "cascade_depth": config.cascade_depth,
        "working_resolution": config.working_resolution,
        "output_map_mode": config.output_map_mode,
        "blend_weight": config.blend_weight,
    }


def config_from_dict(data: dict) -> PipelineConfig:
    """Build and validate a config from its JSON representation."""
    cfg = PipelineConfig()
    known = set(config_to_dict(cfg))
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config field(s): {sorted(unknown)}", field=sorted(unknown)[0])
    kwargs: dict = {}
    for name in known & set(data):
        if name == "kernel":
            spec = data["kernel"]
            try:
                kwargs["kernel"] = StructuringElement.of(
                    spec.get("shape", "ellipse"), tuple(spec.get("size", (25, 25)))
                )
            except ConfigError:
                raise
            except Exception as exc:
                raise ConfigError(f"kernel.size is malformed: {exc}", field="kernel.size") from exc
        else:
            kwargs[name] = data[name]
    return validate_config(replace(cfg, **kwargs))
