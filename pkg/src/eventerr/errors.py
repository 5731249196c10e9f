"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    pass


class SingularMatrixError(ArithmeticError):
    pass


class SolverFailureError(RuntimeError):
    """Newton iteration on a space-time slab did not converge."""

    def __init__(self, slab, residual, message=None):
        self.slab = slab
        self.residual = residual
        super().__init__(
            message
            or f"Newton iteration failed on slab {slab} (relative residual {residual:.3e})"
        )


class EventNotFoundError(LookupError):
    """Fewer crossings exist than the requested occurrence index."""

    def __init__(self, found, requested=None):
        self.found = found
        self.requested = requested
        msg = f"only {found} crossing(s) found"
        if requested is not None:
            msg += f", occurrence {requested} requested"
        super().__init__(msg)


class DegenerateDenominatorError(ArithmeticError):
    """The linearised rate of change of the functional vanishes at the event."""


class UnsupportedError(NotImplementedError):
    pass


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
