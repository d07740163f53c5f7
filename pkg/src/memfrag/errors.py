"""Exception hierarchy.

Everything raised deliberately by the package derives from
:class:`MemfragError`.  The CLI maps :class:`InputError` subclasses to exit
status 1 and :class:`InvariantViolation` subclasses to exit status 2.
"""


class MemfragError(Exception):
    pass


class InputError(MemfragError):
    """Bad user-supplied data (files, flags, arguments)."""


class InvariantViolation(MemfragError):
    """An internal consistency check failed."""


class MalformedDumpError(InputError):
    pass


class EmptyDumpError(InputError):
    pass


class FixtureFormatError(InputError):
    def __init__(self, offset, char):
        super().__init__(f"invalid usage-map character {char!r} at offset {offset}")
        self.offset = offset
        self.char = char


class ProfileFileError(InputError):
    pass


class InsufficientDataError(InputError):
    pass


class DegenerateProfileError(InputError):
    pass


class InvalidProfileError(InputError):
    pass


class ConfigurationError(InputError):
    pass


class SeriesError(InputError):
    pass


class DegenerateCorrelationError(InputError):
    pass


class ConvergenceError(InvariantViolation):
    def __init__(self, iterations, residual):
        super().__init__(
            f"power iteration did not converge after {iterations} iterations "
            f"(last change {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual
