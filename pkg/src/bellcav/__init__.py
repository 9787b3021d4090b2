"""Bell test relayed through classical torsion balances, with LHV no-go checks."""

from .behavior import BehaviorTable
from .errors import (
    BellCavError,
    InconclusiveReadout,
    IntegrationError,
    LPSolverError,
    StageError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "BehaviorTable",
    "BellCavError",
    "InconclusiveReadout",
    "IntegrationError",
    "LPSolverError",
    "StageError",
    "ValidationError",
]
