"""Exception types shared across the package."""


class ConstraintError(RuntimeError):
    """A constructive constraint could not be satisfied (e.g. sensor placement)."""


class ProtocolError(ValueError):
    """Packet stream violates the framing protocol (duplicates, disallowed gaps)."""


class NumericalError(RuntimeError):
    """An iterative solver failed to converge; carries diagnostics in args."""


class ConfigError(ValueError):
    """Configuration file violates the expected schema.

    `field` holds a dotted path to the offending entry so CLI error output can
    point at it.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message
