"""Exception types shared across the package."""


class ZDShieldError(Exception):
    """Base class for all package errors."""


class NonFiniteState(ZDShieldError):
    """A state or stage derivative became NaN or infinite."""

    def __init__(self, message, t=None, column=None):
        super().__init__(message)
        self.t = t
        self.column = column


class DomainError(ZDShieldError, ValueError):
    """A square-root radicand (tank level) left the physical region."""


class SolveError(ZDShieldError):
    """An algebraic construction has no solution."""


class NoConvergence(ZDShieldError):
    """An iterative procedure did not settle within its budget."""


class DegenerateBox(ZDShieldError, ValueError):
    """A sampling box has an empty side."""


class GridMismatch(ZDShieldError, ValueError):
    """Two trajectories do not share a time grid."""


class SingularJacobian(ZDShieldError):
    """The adaptation gradient vanished."""


class AttackHadNoEffect(ZDShieldError, ZeroDivisionError):
    """The no-recovery run did not move the zero dynamics, so the success index is undefined."""


class ConfigError(ZDShieldError, ValueError):
    """Invalid scenario configuration. ``problems`` lists field-level messages."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
