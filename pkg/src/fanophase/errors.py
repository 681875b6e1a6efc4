"""Exception hierarchy shared by the library and the command-line front end."""


class FanoPhaseError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ConfigError(FanoPhaseError):
    """Invalid or unreadable run configuration."""

    exit_code = 1


class DataError(FanoPhaseError):
    """Malformed, missing or unusable spectral data."""

    exit_code = 2


class SpectrumFormatError(DataError):
    """A spectrum file could not be parsed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class FitError(FanoPhaseError):
    """A numerical fit failed (no converged start, pole in range, ...)."""

    exit_code = 3
