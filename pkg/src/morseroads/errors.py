"""Exception types shared across the package."""


class MorseRoadsError(Exception):
    """Base class for all package errors."""


class ParameterError(MorseRoadsError, ValueError):
    """A parameter is outside its documented domain."""


class FormatError(MorseRoadsError, ValueError):
    """A file is malformed or of an unsupported format."""


class BoundsError(ParameterError):
    """A graph vertex lies outside the raster it is paired with."""


class SegmenterError(MorseRoadsError, RuntimeError):
    """The external segmenter failed or violated the file protocol."""

    def __init__(self, message: str, *, returncode=None, stdout: str = "", stderr: str = ""):
        super().__init__(message)
        self.returncode = returncode
        self.stdout = stdout
        self.stderr = stderr
