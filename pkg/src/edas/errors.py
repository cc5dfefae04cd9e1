"""Exception hierarchy shared by the pipeline stages.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericError`` -> 3.
"""


class DataError(ValueError):
    """Input data violates a format or content contract."""


class CorpusParseError(DataError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class UnknownTagError(DataError):
    def __init__(self, code: str, line_no: int | None = None):
        where = f"line {line_no}: " if line_no is not None else ""
        super().__init__(f"{where}unknown dialogue-act tag {code!r}")
        self.code = code
        self.line_no = line_no


class SchemeError(DataError):
    """A label does not belong to the declared emotion/sentiment scheme."""


class SequenceError(DataError):
    """Turn indices within a dialogue are not consecutive from zero."""


class InventoryMismatchError(DataError):
    """Model and corpus were built against different tag inventories."""


class CheckpointError(DataError):
    """Checkpoint file is corrupt, of the wrong version, or of the wrong kind."""


class NumericError(ArithmeticError):
    """Training produced a non-finite value."""
