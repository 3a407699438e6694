"""Exception and warning types shared across the package."""

from __future__ import annotations


class EchoSimError(Exception):
    """Base class for all errors raised by apc_echo."""


class InputError(EchoSimError, ValueError):
    """A state or argument handed to a physics routine is malformed."""


class ConfigError(EchoSimError, ValueError):
    """Invalid configuration.

    ``errors`` holds ``(path, message)`` pairs; ``path`` points into the
    config document (``sequence.pulses[1].duration``) or names the object
    at fault when the error does not come from a document.
    """

    def __init__(self, errors: list[tuple[str, str]] | str):
        if isinstance(errors, str):
            errors = [("", errors)]
        self.errors = list(errors)
        super().__init__("; ".join(f"{p}: {m}" if p else m for p, m in self.errors))


class SequenceError(ConfigError):
    """A pulse sequence violates ordering or channel rules."""


class NonIdealRephasingWarning(UserWarning):
    """A rephasing or control pulse does not have area pi."""


class EchoHaltWarning(UserWarning):
    """The control pulse comes too late: no second echo is expected."""


class PhysicalityWarning(UserWarning):
    """Decay constants violate the positivity bounds of the relaxation model."""
