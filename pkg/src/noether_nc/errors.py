"""Exception hierarchy shared by every module of the package."""


class NoetherError(Exception):
    """Base class for all errors raised by noether_nc."""


class ExprSyntaxError(NoetherError, ValueError):
    """Malformed expression text.

    ``position`` is the zero-based character offset of the offending token.
    """

    def __init__(self, message, position=None, text=None):
        self.position = position
        self.text = text
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


class UnknownVariable(ExprSyntaxError):
    pass


class IndexOutOfRange(ExprSyntaxError):
    pass


class DomainError(NoetherError, ArithmeticError):
    """Evaluation left the real domain (ln/sqrt/pow of bad argument, x/0, overflow)."""


class UnboundVariable(NoetherError, KeyError):
    pass


class AnsatzTooLarge(NoetherError, ValueError):
    pass


class VerificationFailed(NoetherError):
    """A discovered nullspace vector failed the symbolic invariance re-check."""

    def __init__(self, message, basis=None, failures=()):
        super().__init__(message)
        self.basis = basis
        self.failures = list(failures)


class NotASymmetry(NoetherError, ValueError):
    def __init__(self, message, verdict=None):
        super().__init__(message)
        self.verdict = verdict


class FormMismatch(NoetherError, ValueError):
    pass


class MissingDerivativeCache(NoetherError, ValueError):
    pass


class NewtonDiverged(NoetherError, RuntimeError):
    def __init__(self, message, last_iterate=None, residual_norm=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual_norm = residual_norm


class NonFiniteState(NoetherError, RuntimeError):
    """Integration blew up; ``partial`` holds the trajectory up to ``last_good_time``."""

    def __init__(self, message, last_good_time=None, partial=None):
        super().__init__(message)
        self.last_good_time = last_good_time
        self.partial = partial


class SingularLagrangian(NoetherError, ValueError):
    pass


class ProblemFileError(NoetherError, ValueError):
    pass
