"""Exception hierarchy shared by the library and the command line."""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_VALIDATION = 4


class HandoverLabError(Exception):
    """Base error; ``exit_code`` is what the CLI returns when it escapes."""

    exit_code = EXIT_RUNTIME


class ConfigError(HandoverLabError):
    exit_code = EXIT_CONFIG


class EqualAbscissa(HandoverLabError):
    """Two same-speed birds with the same head abscissa."""


class NonPositiveRadius(HandoverLabError):
    pass


class DomainError(HandoverLabError):
    pass


class EmptyRealization(HandoverLabError):
    pass


class VoidViolation(HandoverLabError):
    """An envelope breakpoint has a head inside one of its void regions."""


class QuadratureFailure(HandoverLabError):
    pass


class UnknownLaw(HandoverLabError):
    pass


class NoEvents(HandoverLabError):
    pass


class InsufficientSamples(HandoverLabError):
    pass


class ZeroExpected(HandoverLabError):
    pass


class Overflow(HandoverLabError):
    """A truncation box or height cap was exhausted."""


class IoError(HandoverLabError):
    pass
