"""Exception hierarchy. CLI exit codes are keyed off these classes."""


class KcrecError(Exception):
    exit_code = 1


class ShapeError(KcrecError, ValueError):
    exit_code = 2


class UsageError(KcrecError):
    exit_code = 2


class ConfigError(UsageError):
    pass


class DegenerateInputError(KcrecError, ValueError):
    exit_code = 3


class DomainError(KcrecError, ValueError):
    exit_code = 3


class SchemaError(KcrecError):
    exit_code = 3


class FormatError(KcrecError):
    exit_code = 3


class CompatibilityError(KcrecError):
    exit_code = 3


class NumericalAbort(KcrecError):
    """Raised when training produces a non-finite loss."""

    exit_code = 4

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
