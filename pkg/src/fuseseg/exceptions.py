"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: configuration/usage problems
exit 1, data/checkpoint problems exit 2, numeric failures exit 3.
"""


class FusesegError(Exception):
    """Common base so callers can catch everything raised by this package."""


class ShapeError(FusesegError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigurationError(FusesegError, ValueError):
    """A configuration value violates an invariant (bad sizes, keys, fractions)."""


class NumericError(FusesegError, ArithmeticError):
    """A forward/backward pass or an optimizer step produced non-finite values."""


class DataError(FusesegError, ValueError):
    """Malformed dataset files (PGM headers, manifests, mismatched dimensions)."""


class CheckpointError(FusesegError, ValueError):
    """Malformed or incompatible checkpoint container."""
