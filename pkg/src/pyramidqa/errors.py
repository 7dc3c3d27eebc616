"""Exception taxonomy shared across the package.

Each error class maps onto one of the process exit codes used by the
command line front end: configuration and usage problems exit 1, numeric
breakdown (NaN/Inf) exits 2, and anything touching the filesystem exits 3.
"""


class PyramidError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(PyramidError):
    """Invalid configuration value or an inconsistent combination of them."""

    exit_code = 1


class InputError(PyramidError):
    """Malformed runtime input, e.g. an out-of-vocabulary token id."""

    exit_code = 1


class DimensionError(PyramidError):
    """Operands with incompatible shapes reached a tensor operation."""

    exit_code = 1


class ContractError(PyramidError):
    """An internal API was called in a way its contract forbids."""

    exit_code = 1


class NumericError(PyramidError):
    """A NaN or Inf appeared where only finite values are allowed."""

    exit_code = 2


class FormatError(PyramidError):
    """A serialized file failed validation (bad magic, version, truncation)."""

    exit_code = 3


class CheckpointError(FormatError):
    """A checkpoint could not be read or does not match the model."""

    exit_code = 3
