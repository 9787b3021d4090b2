"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class BellCavError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(BellCavError, ValueError):
    """An input violates a documented invariant."""


class LPSolverError(BellCavError, RuntimeError):
    """The linear-programming backend failed to converge.

    Never used to signal a locality verdict.
    """


class IntegrationError(BellCavError, RuntimeError):
    """The torsion-balance integrator became unstable."""


class InconclusiveReadout(BellCavError):
    """The pointer did not settle, or settled inside the dead band."""


class StageError(BellCavError):
    """A trial failed; carries the trial id and the stage that raised."""

    def __init__(self, trial_id: int, stage: str, cause: BaseException):
        self.trial_id = trial_id
        self.stage = stage
        self.cause = cause
        super().__init__(f"trial {trial_id} failed in stage {stage!r}: {cause}")
