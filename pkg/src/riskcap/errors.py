"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so library code should raise
the most specific one that applies.
"""


class ValidationError(ValueError):
    """Model or run parameters violate a documented precondition."""


class NonConvergenceError(RuntimeError):
    """A series or iteration failed to reach tolerance within its cap."""


class CandidateRejectedError(RuntimeError):
    """A candidate wealth threshold produced an inadmissible auxiliary solution.

    Raised while scanning for the free boundary; callers treat it as "this
    candidate is not a root", not as a fatal failure.
    """

    def __init__(self, reason, detail=""):
        self.reason = reason  # "dove" | "stalled" | "bad_coefficients" | "step_underflow"
        super().__init__(f"candidate rejected ({reason}): {detail}" if detail else f"candidate rejected ({reason})")


class SolverError(RuntimeError):
    """The free-boundary solve failed (no bracket, no admissible root, ...)."""


class SimulationError(RuntimeError):
    """Monte Carlo path generation failed (non-finite wealth, bad config)."""
