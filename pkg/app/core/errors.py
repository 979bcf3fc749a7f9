"""Codec error hierarchy.

Every error carries the process exit code used by the command-line harness and
the HTTP status used by the API layer, so services raise one thing and both
surfaces translate it.
"""


class CodecError(Exception):
    exit_code = 1
    status_code = 400

    def __init__(self, detail: str) -> None:
        super().__init__(detail)
        self.detail = detail


class InputError(CodecError):
    """Bad arguments, unsupported audio, usage mistakes."""


class ConfigurationError(InputError):
    pass


class EmptyStreamError(InputError):
    """Signal shorter than one analysis window, or an empty corpus."""


class DimensionError(InputError, ValueError):
    """Array shapes disagree with the model they are fed to."""


class FormatError(CodecError):
    """A binary artifact (weights, codebooks, features, bitstream) is malformed."""

    exit_code = 2
    status_code = 422


class CorruptStreamError(FormatError):
    pass


class BundleMismatchError(FormatError):
    """Bitstream header hashes do not match the loaded artifacts."""

    status_code = 409


class NumericError(CodecError):
    """Training or synthesis produced non-finite values."""

    exit_code = 3
    status_code = 500
