"""Exception hierarchy with stable machine-readable error codes.

Every error raised by the toolkit carries a ``code`` string so callers
(and the CLI) can distinguish failure modes without parsing messages.
The CLI maps the three classes to exit codes: ConfigError -> 2,
InputError -> 3, MetricError -> 4.
"""


class SarvalError(Exception):
    """Base class for all toolkit errors."""

    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(f"{code}: {message}")


class ConfigError(SarvalError):
    """Invalid configuration: bad label sets, priorities, CLI arguments."""


class InputError(SarvalError):
    """Malformed or inconsistent input data (files, arrays, manifests)."""


class MetricError(SarvalError):
    """A metric family could not be computed from otherwise valid inputs."""
