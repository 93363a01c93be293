"""Exception hierarchy shared by every module.

The CLI maps :class:`DataError` subclasses to exit code 3 and
:class:`NumericError` subclasses to exit code 4.
"""


class BidbError(Exception):
    """Base class for all errors raised by this package."""


class DataError(BidbError):
    """Input data or configuration failed validation."""


class NumericError(BidbError):
    """A computation hit a degenerate numeric case."""


class DimensionError(DataError, ValueError):
    pass


class EmptyAggregateError(DataError, ValueError):
    pass


class DatasetError(DataError):
    pass


class IngestionError(DataError):
    pass


class AlignmentError(DataError):
    pass


class UndefinedMetricError(DataError):
    pass


class NotMatedError(DataError, KeyError):
    pass


class ConfigError(DataError, ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class FormatError(DataError):
    """A binary container or CSV file is malformed."""


class DegenerateVectorError(NumericError, ValueError):
    pass


class DegenerateTemplateError(DegenerateVectorError):
    pass
