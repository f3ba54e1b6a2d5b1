from typing import Optional


class SpeakerBackendError(Exception):
    pass


class DataError(SpeakerBackendError):
    """
    Input files or in-memory data do not follow the expected layout
    """


class FormatError(DataError):
    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class ParseError(DataError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionError(DataError):
    pass


class DuplicateKeyError(DataError):
    pass


class MissingKeyError(DataError):
    def __init__(self, key: str, side: str = ""):
        self.key = key
        self.side = side
        where = f" in {side} set" if side else ""
        super().__init__(f"Key not found{where}: {key}")


class LabelError(DataError):
    pass


class NumericError(SpeakerBackendError):
    """
    Computation cannot produce a meaningful finite result
    """


class DomainError(NumericError):
    pass


class ConditioningError(NumericError):
    pass


class TrainingError(NumericError):
    pass


class DegenerateGraphError(NumericError):
    pass


class UndefinedMetricError(NumericError):
    pass
