"""Exception hierarchy shared across the package.

Every error carries a short machine-readable ``code`` so the CLI can
emit structured failures without string matching.
"""


class LidKitError(Exception):
    """Base error. ``code`` is a stable kebab-case identifier."""

    code = "error"

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class WavError(LidKitError):
    """WAV parsing/writing failure; code distinguishes the cause."""

    code = "wav-error"


class ConfigError(LidKitError):
    code = "config-error"


class ShapeError(LidKitError):
    code = "shape-mismatch"


class TrainingDivergedError(LidKitError):
    code = "training-diverged"


class NonFiniteGradientError(LidKitError):
    code = "non-finite-gradient"
