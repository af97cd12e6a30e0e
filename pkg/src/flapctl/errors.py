"""Exception types shared across the package."""


class FlapctlError(Exception):
    """Base class for every error raised by flapctl."""


class AdmissibilityError(FlapctlError, ValueError):
    """Stroke-timing asymmetry outside the admissible range |A| < 0.5."""


class ModulationRateError(FlapctlError, ValueError):
    """Drift-compensated phase rate would be non-positive (A changing too fast)."""


class AliasingError(FlapctlError, ValueError):
    """Filter cutoff at or above the Nyquist limit of its sample rate."""


class IntegrationFault(FlapctlError, RuntimeError):
    """Non-finite state produced by a time integrator."""


class DegenerateSegmentError(FlapctlError, ValueError):
    """Contour has coincident consecutive points."""


class IllConditionedError(FlapctlError, ArithmeticError):
    """Normal equations too ill-conditioned to solve reliably."""

    def __init__(self, message: str, condition: float):
        super().__init__(message)
        self.condition = condition


class NoCyclesError(FlapctlError, ValueError):
    """No stroke cycles could be segmented from a signal."""


class ConfigError(FlapctlError, ValueError):
    """Configuration value violates a documented invariant."""
