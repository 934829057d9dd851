"""Exception hierarchy shared by all modules.

The CLI maps these onto process exit codes: configuration problems exit
with 2, numerical/structural failures with 3, verification property
failures with 1.
"""


class QaoiError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(QaoiError, ValueError):
    """An argument is outside its documented domain (bad probability,
    non-positive tolerance, age out of range, ...)."""


class StructuralError(QaoiError):
    """A structural guarantee was violated: a policy that should be
    threshold-type is not, index levels stopped increasing, or a
    next-threshold search found no change in active time."""


class NumericalError(QaoiError):
    """A numerical procedure failed: singular linear system, negative
    stationary probability beyond round-off, non-convergent iteration."""


class CapacityError(QaoiError):
    """A requested exact computation exceeds the configured state-space cap."""


class ContractError(QaoiError):
    """A runtime contract between components was broken (channel budget
    exceeded, missing index-table entry)."""


class ConfigError(QaoiError):
    """An experiment configuration file failed validation."""
