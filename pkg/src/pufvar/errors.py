"""Error types shared across the analysis pipeline.

Every validation failure carries a stable, machine-readable ``code`` so the
command line can report it without parsing messages.
"""


class PufVarError(ValueError):
    """Validation error with a stable error code."""

    code = "VALIDATION_ERROR"

    def __init__(self, message, code=None, line=None):
        if code is not None:
            self.code = code
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)

    def __str__(self):
        return f"{self.code}: {super().__str__()}"


class ParseError(PufVarError):
    code = "PARSE_ERROR"


class NegativeEstimateWarning(UserWarning):
    """A variance estimate came out negative; the model assumptions are violated."""

    code = "NEGATIVE_ESTIMATE"
