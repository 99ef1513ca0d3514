class DomainError(ValueError):
    """Inputs outside the domain of an operation (bad parameter, shape, symbol)."""


class ResourceError(RuntimeError):
    """A configured size or work budget would be exceeded."""


class SchemaError(ValueError):
    """Malformed JSON input; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class Refusal(Exception):
    """A bound was not computed because its preconditions fail.

    ``reason`` is a short machine-readable tag, ``detail`` a human message.
    """

    def __init__(self, reason, detail=""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


class SearchFailure(RuntimeError):
    """No feasible candidate was found; ``report`` lists what went wrong."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or []
