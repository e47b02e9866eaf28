"""Exception hierarchy shared by all modules."""


class CommonNoiseError(Exception):
    """Base class for errors raised by this package."""


class DomainError(CommonNoiseError, ValueError):
    """An argument lies outside the domain of the operation."""


class GridMismatchError(CommonNoiseError, ValueError):
    """Two grid CDFs do not live on the same spatial grid."""


class TruncationOverflowError(CommonNoiseError):
    """A shift would push too much mass outside the truncated domain.

    Callers should enlarge ``[x_min, x_max]``.
    """

    def __init__(self, message, lost_mass=None):
        super().__init__(message)
        self.lost_mass = lost_mass


class SpecError(CommonNoiseError, ValueError):
    """A coefficient or initial-law specification is invalid."""


class ContractViolation(CommonNoiseError):
    """A runtime contract (for example a declared bound on gamma) was broken."""


class LipschitzViolation(SpecError):
    """A Lipschitz probe found a pair of measures exceeding the declared constant."""

    def __init__(self, message, witness=None, ratio=None):
        super().__init__(message)
        self.witness = witness
        self.ratio = ratio


class CflError(CommonNoiseError, ValueError):
    """The explicit scheme time step violates the stability bound."""


class NumericalBlowupError(CommonNoiseError, FloatingPointError):
    """A non-finite value appeared during time stepping."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NonConvergenceError(CommonNoiseError):
    """Picard iteration did not reach the requested tolerance."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = list(log or [])


class ConfigError(CommonNoiseError, ValueError):
    """Configuration could not be validated; ``errors`` lists every problem."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
