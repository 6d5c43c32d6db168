"""Exception taxonomy shared by all modules.

Every numerical failure raised by this package derives from CrcTermError so
the CLI can map it to a single exit code. The leaf classes mirror the error
conditions of the individual operations.
"""


class CrcTermError(Exception):
    """Base class for all numerical/domain errors raised by crcterm."""


class ZeroValue(CrcTermError):
    """A characteristic-function value is exactly zero; log undefined."""


class BranchJump(CrcTermError):
    """Consecutive phase step >= pi during unwrapping; grid too coarse."""


class Unsupported(CrcTermError):
    """Operation not available for this input (e.g. sampler-only law)."""


class HorizonExhausted(CrcTermError):
    """A surface has too few maturities left for the requested operation."""


class DomainExit(CrcTermError):
    """A Riccati flow left the admissible domain of the model."""


class Overflow(CrcTermError):
    """|phi| exceeded the configured bound during a flow recursion."""


class OdeStepError(CrcTermError):
    """The one-step ODE integrator detected blow-up."""


class Unsolvable(CrcTermError):
    """Extension extraction hit a vanishing (or invalid) linear coefficient."""


class ExtrapolationNeeded(CrcTermError):
    """A transported argument left the convex hull of tabulated arguments."""


class Degenerate(CrcTermError):
    """A regression has no usable variation in the regressor."""


class TooShort(CrcTermError):
    """A time series is shorter than the estimator window requires."""


class TooLarge(CrcTermError):
    """Brute-force enumeration would exceed the configured guard."""


class PinMissing(CrcTermError):
    """A required evaluation pin (e.g. u = i) is not on the grid."""


class InsufficientPaths(CrcTermError):
    """A Monte Carlo band is wider than the target; check uninformative."""


class AdmissibilityExhausted(CrcTermError):
    """Parameter policy retries spent and the fallback is inadmissible too."""


class ParseError(CrcTermError):
    """Scenario configuration text could not be parsed."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class ValidationError(CrcTermError):
    """Scenario configuration violates one or more invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
