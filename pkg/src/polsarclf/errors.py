"""Exception hierarchy shared by every stage of the package."""


class PolsarError(Exception):
    """Base class for all errors raised by polsarclf."""


class FormatError(PolsarError):
    pass


class MalformedHeader(FormatError):
    pass


class DimensionMismatch(FormatError):
    pass


class NonFiniteValue(FormatError):
    pass


class IoFailure(PolsarError, OSError):
    pass


class EmptyImage(PolsarError):
    pass


class MissingClassModel(PolsarError):
    pass


class ConvergenceFailure(PolsarError):
    pass


class DecompositionError(PolsarError):
    """Raised by feature extraction; carries the offending pixel."""

    def __init__(self, message, row=None, col=None, band=None):
        where = []
        if band is not None:
            where.append(f"band={band}")
        if row is not None:
            where.append(f"row={row}, col={col}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row, self.col, self.band = row, col, band


class TooFewSamples(PolsarError):
    pass


class ShapeMismatch(PolsarError, ValueError):
    pass


class DivergenceDetected(PolsarError):
    pass


class KTooLarge(PolsarError, ValueError):
    pass


class TooFewClasses(PolsarError):
    pass


class ClassTooSmall(PolsarError):
    pass


class BandMismatch(PolsarError):
    pass


class VersionMismatch(FormatError):
    pass


class MalformedModel(FormatError):
    pass


class PaletteTooSmall(PolsarError):
    pass


class StageError(PolsarError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
