"""Exception types raised across the package."""


class EEGProbeError(Exception):
    """Base class for computational errors (CLI exit code 1)."""


class InvalidShape(EEGProbeError, ValueError):
    pass


class InvalidSelector(EEGProbeError, ValueError):
    pass


class ShapeMismatch(EEGProbeError, ValueError):
    pass


class SwitchMismatch(EEGProbeError, ValueError):
    pass


class DegenerateDataset(EEGProbeError, ValueError):
    pass


class EmptyCategory(EEGProbeError, LookupError):
    pass


class NonFiniteEncountered(EEGProbeError, FloatingPointError):
    pass


class WindowTooLong(EEGProbeError, ValueError):
    pass


class InvalidBand(EEGProbeError, ValueError):
    pass


class MismatchedAxes(EEGProbeError, ValueError):
    pass


class FormatError(EEGProbeError, ValueError):
    """A file does not follow the EPD1/EPW1 layout or disagrees with its model."""


class AllMasked(UserWarning):
    """Emitted when saliency masking would mark an entire channel."""
