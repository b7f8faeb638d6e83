class OrthoMadsError(Exception):
    """Base class for every error raised by the tuner."""


class BudgetExhausted(OrthoMadsError):
    """The run's evaluation budget would be exceeded by one more black-box call."""

    def __init__(self, max_evals: int):
        super().__init__(f"evaluation budget of {max_evals} exhausted")
        self.max_evals = max_evals


class SearchBudgetSpent(OrthoMadsError):
    """A search stage used up its own share of evaluations."""


class LibsvmParseError(OrthoMadsError):
    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class DegenerateFoldsError(OrthoMadsError):
    """Every cross-validation fold lacked a class in its training part."""


class RankingError(OrthoMadsError):
    """The summary table has a hole: some method has no row for some dataset."""


class DegenerateSimplexError(OrthoMadsError, ValueError):
    """The centroid of a Nelder-Mead simplex coincides with its worst vertex."""
