"""
Exception hierarchy for SpectraLink
Each error class carries the CLI exit code it maps to
"""

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_DOMAIN = 3


class SpectraLinkError(Exception):
    """Base class for all SpectraLink errors"""
    exit_code = EXIT_DOMAIN


class UsageError(SpectraLinkError, ValueError):
    """Dimension mismatch, out-of-range argument or other caller mistake"""
    exit_code = EXIT_USAGE


class ConfigError(SpectraLinkError):
    """Invalid or incomplete run configuration"""
    exit_code = EXIT_USAGE


class DomainError(SpectraLinkError, ValueError):
    """Value outside the mathematical domain of an operation"""
    exit_code = EXIT_DOMAIN


class CalibrationError(SpectraLinkError):
    """Extinction profiles cannot be identified from the given samples"""
    exit_code = EXIT_DOMAIN

    def __init__(self, message: str, species=None, condition_number: float = float('nan')):
        super().__init__(message)
        self.species = list(species or [])
        self.condition_number = condition_number


class DatasetFormatError(SpectraLinkError):
    """SPCD file with bad magic, unsupported version or inconsistent header"""
    exit_code = EXIT_IO


class DatasetTruncatedError(DatasetFormatError):
    """SPCD payload shorter than its header announces"""


class CheckpointFormatError(SpectraLinkError):
    """Unreadable or inconsistent .fcnn checkpoint"""
    exit_code = EXIT_IO


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the CLI exit code discipline"""
    if isinstance(error, SpectraLinkError):
        return error.exit_code
    if isinstance(error, OSError):
        return EXIT_IO
    return EXIT_DOMAIN
