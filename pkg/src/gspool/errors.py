"""Exception taxonomy shared by the library and the CLI.

The CLI maps these onto exit codes: configuration / input-format problems
exit with 2, numerical failures with 3 (check failures reported by
``gradcheck`` exit with 1 but are not exceptions).
"""


class GspoolError(Exception):
    """Base class for all library errors."""


class ConfigError(GspoolError, ValueError):
    """Invalid configuration value (bad mu/epsilon/lambda, flag misuse...)."""


class DataFormatError(GspoolError, ValueError):
    """Malformed input data: shape mismatches, unparseable CSV, bad labels."""


class NumericalFailure(GspoolError, RuntimeError):
    """A numerical routine failed: NaN iterates, non-SPD factorization."""


class DegenerateGradientError(NumericalFailure):
    """Transport backward pass requested at a point where the Jacobian
    is singularly defined (mu = 1, or the denominator guard tripped)."""
