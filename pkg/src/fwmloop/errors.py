"""Exception hierarchy."""


class FwmLoopError(Exception):
    """Base class for all package errors."""


class ConfigError(FwmLoopError, ValueError):
    """A configuration value violates its documented invariants."""


class PhaseMismatchError(FwmLoopError, ValueError):
    """The reduced relative-phase formula was used without phase matching."""


class NotNormalizedError(FwmLoopError, ValueError):
    pass


class AngleMismatchError(FwmLoopError, ValueError):
    pass


class IncompleteSetError(FwmLoopError, ValueError):
    pass


class ZeroDenominatorError(FwmLoopError, ZeroDivisionError):
    pass


class FitError(FwmLoopError, RuntimeError):
    """A fit did not converge to an acceptable optimum."""


class NoFeasibleFitError(FitError):
    pass
