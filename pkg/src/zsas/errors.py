"""Exception hierarchy shared by all zsas modules."""


class ZsasError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ZsasError):
    """A configuration value violates its contract.

    ``field`` names the offending configuration field when known.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class DataError(ZsasError):
    """Input data violates a shape, finiteness, or value contract."""


class EmptyRegionError(ZsasError):
    """An operation that requires a non-empty pixel region received none."""


class DegenerateFeatureError(ZsasError):
    """Feature statistics collapsed (e.g. an all-zero prototype vector)."""


class BackendError(ZsasError):
    """A scorer or segmenter backend failed.

    ``stage`` is the cascade stage index (1-based) when the failure
    happened inside a cascade.
    """

    def __init__(self, message: str, stage: int | None = None):
        super().__init__(message)
        self.stage = stage


class SignatureError(BackendError):
    """A serialized graph does not match the expected tensor signature."""


class MetricError(ZsasError):
    """A metric is undefined for the given inputs (e.g. single-class truth)."""


class DatasetError(ZsasError):
    """A dataset directory violates the expected layout."""
