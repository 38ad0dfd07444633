"""Exception types shared across the engine.

Each class maps to one CLI exit code (see docs/cli.md).
"""


class EngineError(Exception):
    """Base class for all engine errors."""

    exit_code = 1


class ShapeMismatchError(EngineError):
    """Two arrays that must share a shape do not."""

    exit_code = 4


class FormatError(EngineError):
    """A file does not conform to its on-disk format."""

    exit_code = 4

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ManifestError(EngineError):
    """Manifest validation failed; carries every violation, not just the first."""

    exit_code = 4

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        lines = "\n  ".join(self.violations)
        super().__init__(f"{len(self.violations)} manifest violation(s):\n  {lines}")


class BackendError(EngineError):
    """A segmentation backend failed to answer a request."""

    exit_code = 5


class ReplayNotFoundError(BackendError):
    """No stored response exists for the requested (image_id, digest) pair."""

    exit_code = 3

    def __init__(self, image_id: str, digest: str):
        super().__init__(
            f"no stored response for image_id={image_id!r} digest={digest}"
        )
        self.image_id = image_id
        self.digest = digest


class ScenePackingError(EngineError):
    """Synthetic scene generation could not place all shapes."""

    exit_code = 5


class ConfigError(EngineError):
    """Inconsistent or incomplete run configuration."""

    exit_code = 2
