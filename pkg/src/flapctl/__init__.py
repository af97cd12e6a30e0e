"""Wingbeat rhythm generation, attitude control and analysis for a flapping-wing robot."""
from ._accel import NUMBA_ENABLED
from .errors import (AdmissibilityError, AliasingError, ConfigError, DegenerateSegmentError,
                     FlapctlError, IllConditionedError, IntegrationFault, ModulationRateError,
                     NoCyclesError)

__version__ = "0.1.0"

__all__ = [
    "NUMBA_ENABLED", "AdmissibilityError", "AliasingError", "ConfigError",
    "DegenerateSegmentError", "FlapctlError", "IllConditionedError", "IntegrationFault",
    "ModulationRateError", "NoCyclesError", "__version__",
]
