"""Exception hierarchy shared by the fitters and the command line."""


class FilmError(Exception):
    """Base class for every error raised by plsfilm."""


class DimensionError(FilmError, ValueError):
    """Arrays whose shapes or weight systems do not line up."""


class DegenerateProblemError(FilmError, ArithmeticError):
    """The operator to diagonalise is zero: nothing can be extracted."""


class ConvergenceError(FilmError, ArithmeticError):
    """An alternating loop hit ``max_iter`` before meeting its tolerance."""

    def __init__(self, message, rank=None, delta=None):
        super().__init__(message)
        self.rank = rank
        self.delta = delta


class InputError(FilmError, ValueError):
    """Unreadable or malformed input file; names the file and line."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}" + (f", line {line}" if line is not None else "")
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line
