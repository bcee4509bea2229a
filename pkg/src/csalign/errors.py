"""Exception types shared across the package.

Everything raised on purpose derives from :class:`CsalignError`, so callers
(including the CLI) can catch one base class and map it to an exit code.
"""


class CsalignError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(CsalignError):
    """Two inputs that must share a dimension do not."""


class DimensionError(CsalignError):
    """A serialized row has the wrong number of fields for its header."""


class ZeroNormRow(CsalignError):
    """A matrix row has (near-)zero Euclidean norm and cannot be normalized."""

    def __init__(self, row: int, norm: float):
        self.row = row
        self.norm = norm
        super().__init__(f"row {row} has near-zero norm {norm:.3e}")


class ZeroNormVector(CsalignError):
    """A vector has (near-)zero Euclidean norm where a direction is required."""


class EmptySet(CsalignError):
    """An operation received an empty sample set."""


class PairCountMismatch(CsalignError):
    """Two paired embedding matrices have different row counts."""


class NotNormalized(CsalignError):
    """An input that must have unit-norm rows does not."""

    def __init__(self, row: int, norm: float):
        self.row = row
        self.norm = norm
        super().__init__(f"row {row} has norm {norm!r}, expected 1 within 1e-6")


class BatchSizeMismatch(CsalignError):
    """Two per-sample batches have different lengths."""


class NonOverlappingError(CsalignError):
    """Two sample sets share no kernel mass, so the divergence is infinite."""


class NonOverlappingTokens(NonOverlappingError):
    """A token-level sample pair shares no kernel mass."""

    def __init__(self, sample: int):
        self.sample = sample
        super().__init__(f"token sets of sample {sample} share no kernel mass")


class InvalidCorrelation(CsalignError):
    """A correlation coefficient is outside the open interval (-1, 1)."""


class QuadratureNotConverged(CsalignError):
    """Doubling the panel count moved a quadrature value by more than the tolerance."""


class FileFormatError(CsalignError):
    """A file being read does not follow its declared format."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(CsalignError):
    """A run configuration is malformed; the message names the offending key path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"config error at {path}: {message}")


class TrainingAborted(CsalignError):
    """Training hit a non-finite loss and stopped."""
