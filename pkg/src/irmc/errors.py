"""Exception taxonomy for the impulse-control solver."""


class IrmcError(Exception):
    """Base class for all library errors."""


class ConfigError(IrmcError):
    """Malformed or inconsistent run configuration (CLI exit code 2)."""


class SolverError(IrmcError):
    """Numerical failure during backward induction (CLI exit code 3)."""


class AbortAtStep(SolverError):
    """Wraps a failure with the backward-induction step at which it occurred."""

    def __init__(self, step, cause):
        super().__init__(f"solve aborted at step k={step}: {cause}")
        self.step = step
        self.cause = cause


class NonFiniteState(SolverError):
    """A simulated state became NaN or infinite."""


class InadmissibleImpulse(IrmcError):
    """An impulse violates the action set bounds or direction."""


class EmptyActionSet(IrmcError):
    """The action set admits no nonzero impulse."""


class DomainDegenerate(IrmcError):
    """A design domain has zero or negative width in some coordinate."""


class TooFewSites(IrmcError):
    """Fewer unique design sites than the scheme requires."""


class DegenerateDesign(IrmcError):
    """Duplicate training sites with conflicting responses."""


class CholeskyFailure(IrmcError):
    """Kernel matrix not positive definite even after nugget escalation."""


class SingularSystem(IrmcError):
    """Spline system could not be solved."""


class BracketFailure(IrmcError):
    """Root bracketing failed in the target-level search."""


class NoEvents(IrmcError):
    """No impulse events available for boundary extraction."""


class InvalidParameters(IrmcError):
    """Model parameters outside the valid range for a closed-form solution."""


class UnsupportedDimension(IrmcError):
    """Operation only implemented for one-dimensional state spaces."""


class VersionMismatch(IrmcError):
    """Persisted surrogate stack has an incompatible format (CLI exit code 4)."""
