"""Error taxonomy shared by the library and the CLI.

Exit codes follow the CLI contract: 2 for caller mistakes, 3 for bad data,
4 for numerical aborts during training.
"""


class ClamError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class UsageError(ClamError):
    """The caller violated an API or CLI contract (bad arguments, shapes, ranges)."""

    exit_code = 2


class CapacityError(UsageError):
    """An exact-enumeration oracle was asked for an instance above its size cap."""


class DataError(ClamError):
    """Input data is malformed or non-finite."""

    exit_code = 3


class NumericError(ClamError):
    """Training produced a non-finite quantity and was aborted."""

    exit_code = 4


class FileFormatError(DataError):
    """A serialized artifact failed validation; ``code`` names the failure kind."""

    code = "format"


class MagicError(FileFormatError):
    code = "magic"


class VersionError(FileFormatError):
    code = "version"


class TruncatedFileError(FileFormatError):
    code = "truncated"


class TrailingDataError(FileFormatError):
    code = "trailing"


class CodeRangeError(FileFormatError):
    code = "vocab-range"
