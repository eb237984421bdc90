"""Exception taxonomy shared across the package.

Every raised condition maps to one of these so callers (and the CLI exit-code
mapping) can rely on a small, stable set.
"""


class XModalError(Exception):
    """Base class for all package errors."""


class DimensionError(XModalError):
    """Operand shapes are incompatible with the operation's contract."""


class ContractError(XModalError):
    """A precondition unrelated to array shape was violated."""


class DegenerateInputError(XModalError):
    """Input is inside the type but outside the operation's domain.

    Example: cosine similarity of a zero-norm vector.
    """


class ConfigError(XModalError):
    """Invalid configuration value or file. CLI exit code 2."""


class FormatError(XModalError):
    """A binary or text artifact on disk does not match its format."""


class UnknownAUError(XModalError):
    """An action-unit id is not in the codebook."""

    def __init__(self, au_id: int):
        self.au_id = au_id
        super().__init__(f"unknown action unit id: {au_id}")


class AUParseError(XModalError):
    """Malformed action-unit string. Carries the character position."""

    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} (position {position})")


class NumericError(XModalError):
    """A numeric operation produced a non-finite value from finite inputs."""


class NumericAbort(NumericError):
    """Training stopped on a non-finite loss. CLI exit code 3.

    Carries the step index and the loss components observed at the abort.
    """

    def __init__(self, message: str, step: int, components: dict):
        self.step = step
        self.components = dict(components)
        super().__init__(message)
