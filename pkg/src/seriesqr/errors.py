"""Exception types shared across the package.

The CLI maps UserInputError to exit code 1 and NumericalError to exit
code 2; everything else is a bug and propagates.
"""


class UserInputError(ValueError):
    """Bad configuration, malformed data, or invalid arguments."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (non-convergence, degeneracy)."""
