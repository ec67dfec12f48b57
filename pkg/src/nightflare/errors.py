"""Exception types raised across the package."""


class FlareError(Exception):
    """Base class for all package errors."""


class DimensionError(FlareError, ValueError):
    """Array shapes do not agree or are too small for the operation."""


class ParameterError(FlareError, ValueError):
    """A parameter lies outside its admissible range."""


class ImageFormatError(FlareError):
    """File is not a supported PNG/PPM/PGM image."""


class SourceMissingError(FlareError):
    """No light source could be found or was supplied."""


class SearchExhaustedError(FlareError):
    """No fully known candidate patch exists inside the search window."""


class StallError(FlareError):
    """The fill loop made no progress."""


class ContractError(FlareError):
    """A caller violated a documented precondition."""


class NonFiniteError(FlareError, FloatingPointError):
    """A NaN or infinity appeared in a solver stage."""

    def __init__(self, stage):
        super().__init__(f"non-finite values in stage {stage!r}")
        self.stage = stage


class PipelineError(FlareError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause
