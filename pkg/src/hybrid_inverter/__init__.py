"""Hybrid GFL/GFM inverter simulation and saltation-based hybrid EKF."""

from .errors import (
    ConfigurationError, EventLocationError, FilterDivergenceError, GrazingTransitionError,
    HybridInverterError, NumericalDomainError, SingularGuardError, StepFailure,
)
from .grid import GridSegment, GridSignal
from .hybrid import HybridState, SwitchRecord
from .params import InverterParams
from .states import Mode

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "EventLocationError", "FilterDivergenceError", "GrazingTransitionError",
    "HybridInverterError", "NumericalDomainError", "SingularGuardError", "StepFailure",
    "GridSegment", "GridSignal", "HybridState", "SwitchRecord", "InverterParams", "Mode",
]
