"""Exception hierarchy shared by every module of the package."""


class TreeScatterError(Exception):
    """Base class for all errors raised by treescatter."""


class InvalidParameter(TreeScatterError, ValueError):
    pass


class DepthInsufficient(TreeScatterError):
    """The truncation is too shallow to determine the requested quantity."""


class OutOfBand(TreeScatterError, ValueError):
    pass


class BandEdgeSingularity(TreeScatterError):
    pass


class SingularParameter(TreeScatterError):
    """Spectral parameter at a pole or an eigenvalue of the operator."""


class ExceptionalParameter(TreeScatterError):
    """The Lippmann-Schwinger system is (numerically) singular."""


class ExceptionalInterval(TreeScatterError):
    pass


class DirichletSingular(TreeScatterError):
    pass


class InconclusiveRange(TreeScatterError):
    pass


class InvalidStructure(TreeScatterError, ValueError):
    pass


class PreconditionViolated(TreeScatterError):
    pass


class InputFormatError(TreeScatterError, ValueError):
    """Malformed JSON input file."""
