class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class FormatError(ValueError):
    """A file or record does not match its expected schema."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
