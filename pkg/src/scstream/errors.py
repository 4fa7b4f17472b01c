"""Exception hierarchy shared by the engine and the CLI."""


class ScStreamError(Exception):
    """Base class for every error raised by this package."""


class InputError(ScStreamError, ValueError):
    """Malformed points, mismatched dimensions or non-monotone timestamps."""


class ConfigurationError(ScStreamError, ValueError):
    """Hyperparameters that cannot produce a valid model."""


class NumericalError(ScStreamError, ArithmeticError):
    """A matrix lost positive definiteness or a distribution degenerated."""


class StateError(ScStreamError, RuntimeError):
    """An operation was applied to a model state that does not support it."""


class FormatError(ScStreamError):
    """A snapshot failed its magic, version or checksum validation."""
