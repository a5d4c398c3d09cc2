"""Exception hierarchy shared by the estimation modules."""

from __future__ import annotations


class IEEError(Exception):
    """Base class for all estimation errors.

    ``iteration`` is filled in by the outer driver when the failure happens
    inside an IEE iteration, so callers can report where it broke.
    """

    iteration: int | None = None

    def __str__(self) -> str:
        msg = super().__str__()
        if self.iteration is not None:
            return f"{msg} (outer iteration {self.iteration})"
        return msg


class DatasetError(IEEError, ValueError):
    """Invalid longitudinal data. ``row`` is the 1-based input row, if known."""

    def __init__(self, message: str, row: int | None = None, source: str | None = None):
        self.row = row
        self.source = source
        where = ""
        if source is not None and row is not None:
            where = f"{source}, row {row}: "
        elif row is not None:
            where = f"row {row}: "
        super().__init__(where + message)


class GroupingError(IEEError, ValueError):
    pass


class MissingGroup(GroupingError):
    """A subject needs a covariance entry that the grouping does not register."""


class NoPartition(IEEError, ValueError):
    """The visit sets do not tile the visit axis into disjoint blocks."""


class IndefiniteCovariance(IEEError, ValueError):
    def __init__(self, message: str, subject=None):
        self.subject = subject
        super().__init__(message)


class SingularInformation(IEEError, ArithmeticError):
    """The summed information matrix could not be factorized."""


class NewtonSingular(SingularInformation):
    def __init__(self, message: str, last_beta=None):
        self.last_beta = last_beta
        super().__init__(message)


class NewtonDiverged(IEEError, ArithmeticError):
    def __init__(self, message: str, last_beta=None):
        self.last_beta = last_beta
        super().__init__(message)


class NonFiniteMean(IEEError, ArithmeticError):
    pass


class NotConverged(IEEError):
    """Outer iteration budget exhausted. ``result`` holds the partial fit."""

    def __init__(self, message: str, result=None):
        self.result = result
        super().__init__(message)
