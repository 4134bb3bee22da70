"""Exception hierarchy.

Configuration problems derive from :class:`ConfigError`; anything that goes
wrong while a solver runs derives from :class:`SolverError`. The CLI maps the
two families to distinct exit codes.
"""


class ElasticPATError(Exception):
    pass


class ConfigError(ElasticPATError, ValueError):
    """Invalid user input. ``key`` names the offending parameter when known."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class NonPositiveParameter(ConfigError):
    def __init__(self, name, index, value):
        super().__init__(
            f"{name} must be positive everywhere; got {value!r} at grid index {tuple(index)}",
            key=name,
        )
        self.index = tuple(int(i) for i in index)
        self.value = value


class GridMismatch(ElasticPATError, ValueError):
    pass


class SupportViolation(ElasticPATError, ValueError):
    pass


class ZeroTruth(ElasticPATError, ValueError):
    pass


class TooLarge(ConfigError):
    pass


class SolverError(ElasticPATError, RuntimeError):
    pass


class UnstableStep(SolverError):
    pass


class InconsistentData(SolverError):
    pass


class SolverDivergence(SolverError):
    pass


class NoProgress(SolverError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class TrappedRay(SolverError):
    def __init__(self, message, origin=None, direction=None, mode=None):
        super().__init__(message)
        self.origin = origin
        self.direction = direction
        self.mode = mode
