"""Exception hierarchy shared by every stage of the restoration pipeline."""


class RestorationError(Exception):
    """Base class for data or numerical failures (CLI exit code 1)."""


class InvalidArgumentError(RestorationError, ValueError):
    pass


class DegenerateFitError(RestorationError):
    pass


class InsufficientDataError(RestorationError):
    pass


class ParseError(RestorationError):
    """Malformed input file. ``line`` is 1-based, or None when not applicable."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
            if line is not None:
                where += f"{line}:"
            where += " "
        super().__init__(where + message)
