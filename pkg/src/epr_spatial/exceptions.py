"""Exception hierarchy.

Every error carries a short machine-parsable ``code`` and the process exit
status the command-line front end maps it to.
"""


class EPRError(Exception):
    """Base class for all package errors."""

    code = "EPR_ERROR"
    exit_status = 1


class ConfigError(EPRError, ValueError):
    """Malformed configuration, unknown prior family, bad flag values."""

    code = "CONFIG"
    exit_status = 2


class ParameterDomainError(EPRError, ValueError):
    """A distribution parameter lies outside its admissible domain."""

    code = "PARAM_DOMAIN"
    exit_status = 2

    def __init__(self, message, field=None, index=None):
        super().__init__(message)
        self.field = field
        self.index = index


class DataError(EPRError, ValueError):
    """Dataset ingestion or validation failure."""

    code = "DATA"
    exit_status = 3

    def __init__(self, message, row_id=None):
        super().__init__(message)
        self.row_id = row_id


class AssemblyError(EPRError, ValueError):
    """Inconsistent dimensions while assembling model matrices."""

    code = "ASSEMBLY"
    exit_status = 3

    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class NumericalError(EPRError, ArithmeticError):
    """Factorization or solver failure."""

    code = "NUMERICAL"
    exit_status = 4

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ChainError(NumericalError):
    """Non-finite state encountered inside an MCMC chain."""

    code = "CHAIN"

    def __init__(self, message, iteration=None, chain=None):
        super().__init__(message)
        self.iteration = iteration
        self.chain = chain


class DiagnosticError(EPRError, ValueError):
    """A diagnostic cannot be computed from the supplied input."""

    code = "DIAGNOSTIC"
    exit_status = 3
