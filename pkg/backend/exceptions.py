"""Error hierarchy shared by the backend modules and mapped to CLI exit codes."""


class TsaError(Exception):
    """Base class for every error raised on purpose by the backend."""

    exit_code = 1


class ConfigError(TsaError):
    """Invalid option values, unknown names or missing input files."""

    exit_code = 2


class DatasetError(TsaError, ValueError):
    """Malformed or inconsistent dataset content."""

    exit_code = 3


class TrainingError(DatasetError):
    """Training preconditions not met (single class, too few samples)."""


class ChaosDomainError(TsaError, ValueError):
    """Chaotic map input outside [0, 1] or a degenerate search box."""

    exit_code = 2


class NumericalError(TsaError):
    """Numerical failure in the power system computations."""

    exit_code = 4


class PowerFlowError(NumericalError):
    """Power flow did not converge or did not balance."""


class SingularNetworkError(NumericalError):
    """Eliminated admittance block is singular or the network is disconnected."""


class SimulationError(NumericalError):
    """Time-domain simulation could not be set up or produced no usable data."""
