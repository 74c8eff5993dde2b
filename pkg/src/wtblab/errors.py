"""Exception hierarchy shared by every module of the package."""


class WtbError(Exception):
    """Base class for all package errors."""


class ParameterError(WtbError, ValueError):
    """A constructor or routine received an invalid parameter."""


class InvalidActionError(WtbError, IndexError):
    """An action index lies outside ``0..K-1``."""


class CapacityError(WtbError):
    """An exact computation would exceed its configured budget."""


class ShapeError(WtbError, ValueError):
    """Two sequences that must share a length do not."""


class ConfigError(WtbError, ValueError):
    """An experiment configuration failed validation."""


class CsvFormatError(WtbError, ValueError):
    """A CSV row could not be parsed or validated.

    Parameters
    ----------
    row : int
        1-based data row number (the header is row 0).
    column : str
        Name of the offending column.
    message : str
        Human readable reason.
    """

    def __init__(self, row: int, column: str, message: str) -> None:
        self.row = row
        self.column = column
        super().__init__(f"row {row}, column {column!r}: {message}")


class NormalizationError(WtbError, ValueError):
    """Lap times of a race cannot be normalized (zero range)."""


class FitError(WtbError):
    """Curve fitting failed to converge from every start.

    The best parameters seen so far are kept on ``best`` so callers can
    inspect or accept them.
    """

    def __init__(self, message: str, best=None) -> None:
        super().__init__(message)
        self.best = best
