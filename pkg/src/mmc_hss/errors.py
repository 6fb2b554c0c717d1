"""Exception types shared across the package.

Anything caused by a bad argument raises plain ValueError at the call site;
the classes here cover failures that only show up once the numerics run.
"""


class SingularSystemError(ArithmeticError):
    """A harmonic system matrix is singular or numerically unusable.

    Carries the 1-norm condition estimate of the offending matrix so callers
    can report how close to singular it was.
    """

    def __init__(self, message, cond_estimate=float("inf")):
        super().__init__(message)
        self.cond_estimate = cond_estimate


class PoleAtResonanceError(ValueError):
    """A controller transfer function was evaluated exactly on an undamped pole."""


class DegenerateResponseError(ArithmeticError):
    """The perturbation response current is numerically zero, impedance undefined."""


class DivergenceError(ArithmeticError):
    """Time-domain integration left the plausible region (non-finite state).

    ``time`` is the simulation time (s) at which the state first went bad.
    """

    def __init__(self, message, time=float("nan")):
        super().__init__(message)
        self.time = time
