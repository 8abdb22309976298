"""Exception hierarchy shared by every fedgrid module."""


class FedGridError(Exception):
    """Base class for all library errors."""


# -- model --------------------------------------------------------------------

class InvalidSpecError(FedGridError, ValueError):
    pass


class ShapeError(FedGridError, ValueError):
    pass


class EmptyInputError(FedGridError, ValueError):
    pass


# -- protocol -----------------------------------------------------------------

class ProtocolDesyncError(FedGridError):
    pass


class IncompleteRoundError(FedGridError):
    pass


class DivergenceError(FedGridError, ArithmeticError):
    def __init__(self, round_index: int, message: str = ""):
        self.round = round_index
        super().__init__(message or f"non-finite loss in round {round_index}")


class DecodeError(FedGridError, ValueError):
    def __init__(self, offset: int, reason: str):
        self.offset = offset
        super().__init__(f"malformed message at byte {offset}: {reason}")


class VersionError(FedGridError, ValueError):
    pass


# -- data ---------------------------------------------------------------------

class DataError(FedGridError, ValueError):
    """Base for problems with input series or files."""


class InvalidParameterError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class InsufficientSpanError(DataError):
    pass


class MissingColumnError(DataError):
    pass


class TimestampParseError(DataError):
    def __init__(self, line: int, value: str):
        self.line = line
        super().__init__(f"line {line}: cannot parse timestamp {value!r}")


class EmptyFileError(DataError):
    pass


class AlignmentError(DataError):
    pass


class InsufficientHorizonError(DataError):
    pass


class IncompatibleModelError(DataError):
    pass


# -- config -------------------------------------------------------------------

class ConfigError(FedGridError, ValueError):
    pass


class ArtifactMismatchError(ConfigError):
    """An input artifact was produced under a different configuration hash."""
