"""Exception hierarchy shared across the package.

Every error carries enough context to be actionable from a CLI run; the
CLI maps categories to exit codes (config -> 2, data -> 3, divergence -> 4).
"""


class SpecfieldError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ConfigError(SpecfieldError):
    """Invalid configuration value or combination."""

    exit_code = 2


class FormatError(SpecfieldError):
    """Malformed file header or structure."""


class RangeError(SpecfieldError):
    """Pixel value outside the valid reflectance range or non-finite."""


class IoError(SpecfieldError):
    """Underlying file I/O failure."""


class PoseError(SpecfieldError):
    """Camera pose fails the rigid-transform check."""


class BandMismatchError(SpecfieldError):
    """Frames in one scene disagree on their band lists."""


class CalibrationError(SpecfieldError):
    """Unusable calibration reference values."""


class DomainError(SpecfieldError):
    """Input outside the mathematical domain of an operation."""


class ShapeError(SpecfieldError):
    """Array dimensions disagree with the declared contract."""


class CacheError(SpecfieldError):
    """Backward pass invoked with a cache from a different forward call."""


class RayError(SpecfieldError):
    """Degenerate ray (e.g. far <= near)."""


class DivergenceError(SpecfieldError):
    """Training produced a non-finite loss."""

    exit_code = 4

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class CheckpointError(SpecfieldError):
    """Checkpoint file incompatible with the requested configuration."""


class MetricBackendError(SpecfieldError):
    """A registered perceptual-metric backend failed."""
