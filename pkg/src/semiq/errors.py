"""Exception hierarchy shared by every semiq module.

Each concrete error carries an ``exit_code`` so the command line front-end can
map failures to distinct process exit statuses.
"""


class SemiqError(Exception):
    exit_code = 1


class InvalidInputError(SemiqError, ValueError):
    exit_code = 2


class InvalidParameterError(SemiqError, ValueError):
    exit_code = 3


class RangeError(InvalidParameterError):
    exit_code = 4


class FormatError(SemiqError, ValueError):
    exit_code = 5


class UnsupportedError(SemiqError):
    exit_code = 6


class AlignmentError(SemiqError, ValueError):
    exit_code = 7


class DegenerateInputError(SemiqError, ValueError):
    exit_code = 8


class InfeasibleError(SemiqError):
    exit_code = 9


class ParseError(SemiqError, ValueError):
    exit_code = 10


class TokenizationError(SemiqError, KeyError):
    exit_code = 11

    def __str__(self):
        # KeyError quotes its message; keep it readable
        return Exception.__str__(self)


class ShapeError(SemiqError, ValueError):
    exit_code = 12


class DivergenceError(SemiqError, FloatingPointError):
    exit_code = 13

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class NoDataError(SemiqError):
    exit_code = 14


class ExternalToolError(SemiqError):
    """An external encoder, decoder or metric binary failed.

    ``diagnostics`` holds whatever the process wrote to stdout/stderr.
    """

    exit_code = 15

    def __init__(self, message, diagnostics=""):
        super().__init__(message)
        self.diagnostics = diagnostics


class AdapterError(ExternalToolError):
    exit_code = 16


class ConfigError(SemiqError, ValueError):
    exit_code = 17
