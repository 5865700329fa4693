"""Exception hierarchy shared by every tomkit module."""


class TomError(Exception):
    """Base class for all tomkit errors."""


class InvalidParameter(TomError, ValueError):
    pass


class DegenerateVector(TomError, ValueError):
    pass


class DegenerateContour(TomError, ValueError):
    pass


class AmbiguousProjection(TomError, ValueError):
    pass


class AmbiguousInterior(TomError, ValueError):
    pass


class NoExit(TomError):
    pass


class OutOfGrid(TomError):
    pass


class NoCandidate(TomError):
    pass


class AnalysisError(TomError):
    """Wraps a failure inside analyze_tool with the stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


# planner
class UnderspecifiedTask(TomError):
    pass


class Infeasible(TomError):
    pass


class BackendUnavailable(TomError):
    pass


class MalformedPlanText(TomError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class InvalidPlan(TomError):
    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


# controller
class ToolTooShort(TomError):
    pass


class Unreachable(TomError):
    pass


class AlreadyAligned(TomError):
    pass


class CannotEnter(TomError):
    pass


# simulation
class ContactJam(TomError):
    pass


class Timeout(TomError):
    def __init__(self, message: str, log=None):
        super().__init__(message)
        self.log = log


class StepFailed(TomError):
    """A plan step failed; carries the step index and the partial log."""

    def __init__(self, index: int, cause: Exception, log=None):
        super().__init__(f"step {index}: {type(cause).__name__}: {cause}")
        self.index = index
        self.cause = cause
        self.log = log


# io
class SchemaError(TomError, ValueError):
    pass


class ParseError(TomError, ValueError):
    """Malformed JSON; carries the file path and the 1-based line and column."""

    def __init__(self, message: str, path: str = "", line: int = 0, col: int = 0):
        super().__init__(f"{path}:{line}:{col}: {message}" if path else message)
        self.path = path
        self.line = line
        self.col = col
