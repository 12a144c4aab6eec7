"""Exception types shared by the numerical stages."""

from __future__ import annotations


class NumericalError(RuntimeError):
    """A numerical stage failed; ``stage`` names it for diagnostics."""

    stage = "numerics"

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage


class DefectiveLiouvillianError(NumericalError):
    stage = "eigendecompose"


class DegenerateMatchingError(NumericalError):
    stage = "beta_finite_difference"


class SingularSteadyStateError(NumericalError):
    stage = "steady_state"


class IntegrationError(NumericalError):
    stage = "integrate"

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} at step {step}")
        self.step = step
