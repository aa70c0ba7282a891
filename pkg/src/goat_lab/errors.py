"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class GoatLabError(Exception):
    exit_code = 4


class InputError(GoatLabError, ValueError):
    """Bad argument to a library call (empty mask, out-of-range node, ...)."""

    exit_code = 2


class ShapeError(InputError):
    pass


class ValidationError(GoatLabError, ValueError):
    """Data violates a domain invariant (mask overlap, label range, ...)."""

    exit_code = 3


class SchemaError(ValidationError):
    """A file does not follow its JSON schema. ``field`` names the culprit."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class NumericError(GoatLabError, ArithmeticError):
    exit_code = 4
