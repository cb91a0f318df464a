"""Exception types shared across the package."""


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes for the requested operation."""


class ImageFormatError(ValueError):
    """A file could not be decoded as a supported 8-bit RGB image."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed, truncated, or incompatible."""


class ManifestError(ValueError):
    """A dataset manifest is empty, unreadable, or inconsistent."""


class ConfigError(ValueError):
    """A run configuration contains unknown keys or invalid values."""


class TrainingDivergedError(RuntimeError):
    """A training step produced a non-finite loss; carries diagnostics."""
