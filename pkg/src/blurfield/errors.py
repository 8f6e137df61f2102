"""Exception types shared across the package."""


class BlurFieldError(Exception):
    """Base class for all blurfield errors."""


class FormatError(BlurFieldError, ValueError):
    """Malformed or inconsistent file content (PFM, checkpoint, grid export)."""


class ManifestError(BlurFieldError, ValueError):
    """Focal-stack manifest violates its schema or invariants."""


class CalibrationError(BlurFieldError, RuntimeError):
    """A geometric or radiometric estimation step failed or is degenerate."""


class DivergenceError(BlurFieldError, RuntimeError):
    """Training produced non-finite losses or gradients."""
