"""Exception types shared across the package."""


class StressKitError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameterError(StressKitError, ValueError):
    """A transform received an out-of-domain parameter."""


class InvalidLevelError(StressKitError, ValueError):
    """A severity level outside the admissible set for its kind."""


class ConfigError(StressKitError):
    """Malformed configuration; carries the dotted path of the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class ManifestError(StressKitError):
    """Malformed or inconsistent sample manifest."""


class ProtocolError(StressKitError):
    """Scorer wire-protocol violation or transport failure."""


class HandshakeError(ProtocolError):
    """Scorer handshake failed (timeout, malformed info, class mismatch)."""


class ScorerJobError(ProtocolError):
    """A scoring job failed or returned unusable values."""


class AlignmentError(StressKitError):
    """Score rows do not line up with the dataset samples."""


class GridMismatchError(StressKitError):
    """Two result tables cover different evaluation grids."""
