"""Exception types raised across the package."""


class CompCausalError(Exception):
    """Base class for all package errors."""


class ConfigError(CompCausalError, ValueError):
    """Invalid configuration or shape mismatch between a spec and its inputs."""


class NumericError(CompCausalError, FloatingPointError):
    """A non-finite value appeared in a forward pass, loss or gradient."""

    def __init__(self, message, layer=None, epoch=None, step=None):
        super().__init__(message)
        self.layer = layer
        self.epoch = epoch
        self.step = step


class UsageError(CompCausalError, RuntimeError):
    """An API was called in an invalid order (e.g. backward on a consumed tape)."""


class DomainError(CompCausalError, ValueError):
    """Inputs are outside the domain where a quantity is defined."""


class SplitError(CompCausalError, ValueError):
    """A seen/unseen split could not satisfy its coverage constraints."""


class LoadError(CompCausalError, ValueError):
    """A feature or split file is malformed or violates dataset invariants."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ContractError(CompCausalError, ValueError):
    """A batch violates a loss precondition (e.g. contains unseen pairs)."""


class UnsupportedError(CompCausalError, NotImplementedError):
    """The operation is not available for this kind of data."""
