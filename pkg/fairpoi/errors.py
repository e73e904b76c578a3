"""Error types shared across the toolkit.

Each error carries the exit code the CLI reports for it.
"""


class FairPoiError(Exception):
    """Base class for toolkit failures."""

    exit_code = 1


class ConfigError(FairPoiError):
    """Invalid or inconsistent experiment configuration."""

    exit_code = 2

    def __init__(self, problems: list[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = problems
        super().__init__("Invalid configuration:\n" + "\n".join(f"  - {p}" for p in problems))


class DataError(FairPoiError):
    """Unreadable, malformed or degenerate input data."""

    exit_code = 3


class MissingCategoriesError(DataError):
    """A category-dependent model was built on a dataset without POI categories."""


class NumericError(FairPoiError):
    """Divergence, singular systems or other numeric failures."""

    exit_code = 4


class DivergentMeasureError(NumericError):
    """A divergence measure evaluates to infinity for the given distributions."""


class StageError(FairPoiError):
    """A pipeline stage failed; wraps the underlying cause."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"Stage '{stage}' failed: {cause}")
