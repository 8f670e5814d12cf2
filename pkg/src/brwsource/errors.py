"""Exception types shared across the pipeline."""


class BRWError(Exception):
    """Base class for all errors raised by brwsource."""


class CompositionError(BRWError, ValueError):
    """Aluminum mole fraction outside [0, 1]."""


class ValidityError(BRWError, ValueError):
    """Wavelength outside the validity window of the index model."""

    def __init__(self, message, window=None):
        super().__init__(message)
        self.window = window


class NoModeError(BRWError, RuntimeError):
    """No guided mode bracketed in the scanned effective-index range."""

    def __init__(self, message, scan_range=None, wavelength_nm=None):
        super().__init__(message)
        self.scan_range = scan_range
        self.wavelength_nm = wavelength_nm


class RangeError(BRWError, ValueError):
    """Query outside the tabulated range of a dispersion table or grid."""


class EmptyBandError(BRWError, ValueError):
    """Channel band carries no biphoton amplitude."""


class StateValidationError(BRWError, ValueError):
    """Matrix is not a valid two-qubit density matrix."""


class FitError(BRWError, ValueError):
    """Least-squares fit is ill-posed."""


class ConfigError(BRWError, ValueError):
    """Invalid run configuration."""
