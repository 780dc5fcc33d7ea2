"""Exception taxonomy.

CLI exit-code mapping: usage problems exit 1, any EngineError exits 2,
unexpected exceptions (internal invariant violations) exit 3.
"""


class EngineError(Exception):
    """Base class for all expected engine failures."""


class ShapeError(EngineError):
    """Tensor rank/extent mismatch."""


class InputError(EngineError):
    """Invalid input values (non-finite, out-of-range ids, bad scales)."""


class ModeError(EngineError):
    """Unknown mode name or malformed mode configuration."""


class CalibrationError(EngineError):
    """Missing or inconsistent calibration data."""


class ContainerError(EngineError):
    """Base class for checkpoint container failures."""


class BadMagicError(ContainerError):
    """File does not start with the container magic."""


class TruncatedPayloadError(ContainerError):
    """Manifest declares bytes beyond the end of the payload."""


class ManifestError(ContainerError):
    """Malformed manifest or manifest/payload disagreement."""


class UnknownDtypeError(ContainerError):
    """Manifest names a dtype the engine does not support."""
