"""Exception hierarchy shared by all sense_forge modules.

Each error class carries the CLI exit code it maps to, so the command line
front end can translate failures without a lookup table.
"""


class SenseForgeError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ContractError(SenseForgeError, ValueError):
    """Inputs violate a documented precondition (shape, mixing, axis mismatch)."""

    exit_code = 2


class ConfigError(ContractError):
    """A run configuration field is invalid."""

    exit_code = 2

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DomainError(SenseForgeError, ValueError):
    """A point lies outside the domain box of a field."""

    exit_code = 2


class DomainExitError(DomainError):
    """A step left the model domain."""

    exit_code = 3

    def __init__(self, message, point=None, path_index=None):
        super().__init__(message)
        self.point = point
        self.path_index = path_index


class ChartRangeError(SenseForgeError, ValueError):
    """A point lies outside the tabulated range of a coordinate chart."""

    exit_code = 2

    def __init__(self, message, path_index=None):
        super().__init__(message)
        self.path_index = path_index


class SingularNoiseError(SenseForgeError, ValueError):
    """The diffusion vanishes somewhere on the range of a 1D chart."""

    exit_code = 4

    def __init__(self, message, abscissa=None):
        super().__init__(message)
        self.abscissa = abscissa


class RankVariationError(SenseForgeError, ValueError):
    """The rank (or signature) of the diffusion matrix changes across the grid."""

    exit_code = 5


class ChartValidationError(SenseForgeError, ValueError):
    """A numerically constructed chart failed its residual check."""

    exit_code = 5

    def __init__(self, message, residual=None, residual_map=None):
        super().__init__(message)
        self.residual = residual
        self.residual_map = residual_map


class StabilityError(SenseForgeError, ValueError):
    """An explicit time step exceeds the stability bound."""

    exit_code = 6

    def __init__(self, message, max_dt):
        super().__init__(message)
        self.max_dt = max_dt
