"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or inconsistent input (bad file, dimension mismatch, bad flag)."""


class ResolutionError(ValueError):
    """A scale-dependent quantity was requested below the sample resolution."""


class DegenerateFitError(ValueError):
    """Plane fit is underdetermined; carries the null spatial directions."""

    def __init__(self, message, null_directions=None):
        super().__init__(message)
        self.null_directions = null_directions


class ConstructionError(RuntimeError):
    """A geometric construction step failed (signals an upstream violation)."""


class RegimeIntegrityError(ConstructionError):
    """The contact set of a stopping regime is inconsistent with its parameters."""
