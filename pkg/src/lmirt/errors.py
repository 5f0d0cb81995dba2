"""Exception types shared across the package."""


class LmirtError(Exception):
    """Base class for all package errors."""


class SpecValidationError(LmirtError):
    """A model specification (or data checked against one) is invalid.

    Carries the full list of problems in ``problems``.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataFormatError(LmirtError):
    """A data/config file could not be parsed or failed validation."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:"
            if line is not None:
                prefix += f"{line}:"
            prefix += " "
        super().__init__(prefix + message)


class DegenerateLikelihoodError(LmirtError):
    """A response sequence has probability zero under the current parameters.

    Raised instead of silently returning -inf so that estimation can reject
    pathological starts explicitly.
    """

    def __init__(self, subject_indices, occasion):
        self.subject_indices = list(subject_indices)
        self.occasion = occasion
        super().__init__(
            f"zero-probability sequence for subject(s) {self.subject_indices} "
            f"at occasion {occasion}"
        )


class EstimationError(LmirtError):
    """Estimation failed (all starts degenerate, inconsistent nested fits, ...)."""
