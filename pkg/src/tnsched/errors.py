"""Exception hierarchy shared by every tnsched module."""


class SchedulingError(Exception):
    """Base class for all tnsched errors."""


class InvalidInstanceError(SchedulingError, ValueError):
    """Malformed instance, rule or instance file."""


class InvalidAssignmentError(SchedulingError, ValueError):
    """Assignment does not fit the instance it is evaluated against."""


class ContractionShapeError(SchedulingError, ValueError):
    """Tensor extents do not line up during contraction."""


class CompileError(SchedulingError, ValueError):
    """A rule group or primitive tensor cannot be built as requested."""


class InfeasibleError(SchedulingError):
    """No assignment satisfies the rules under the current restrictions."""


class MemoryCapExceeded(SchedulingError):
    """Projected contraction size exceeds the configured memory cap."""

    def __init__(self, needed_bytes: int, cap_bytes: int):
        super().__init__(
            f"contraction needs ~{needed_bytes / 2**20:.1f} MiB, cap is {cap_bytes / 2**20:.1f} MiB"
        )
        self.needed_bytes = needed_bytes
        self.cap_bytes = cap_bytes


class NoSolutionFound(SchedulingError):
    """The iterative solver exhausted its budget without a feasible result."""


class GenerationError(SchedulingError):
    """Random instance generation could not place the requested rules."""


class OracleSizeError(SchedulingError):
    """Instance too large for exhaustive enumeration."""
