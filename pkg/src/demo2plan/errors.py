"""Exception hierarchy shared by all pipeline stages."""


class Demo2PlanError(Exception):
    """Base class; ``exit_code`` is what the CLI returns when this escapes."""

    exit_code = 3


class UsageError(Demo2PlanError):
    exit_code = 2


class IoError(UsageError):
    pass


class ParseError(UsageError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(UsageError):
    pass


class ConfigError(UsageError):
    pass


class EmptyDataset(Demo2PlanError):
    pass


class ShapeError(Demo2PlanError):
    pass


class DomainError(Demo2PlanError):
    pass


class StepRange(Demo2PlanError):
    pass


class StepOrder(Demo2PlanError):
    pass


class DivergedError(Demo2PlanError):
    def __init__(self, step):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step


class BehindCamera(Demo2PlanError):
    pass


class NoIntersection(Demo2PlanError):
    pass


class IntersectionBehindCamera(Demo2PlanError):
    pass


class MissingObservation(Demo2PlanError):
    pass


class UnreachableTarget(Demo2PlanError):
    def __init__(self, residual, stalled=True):
        super().__init__(f"target unreachable, best residual {residual:.4g} m")
        self.residual = residual
        self.stalled = stalled


class PlanInfeasible(Demo2PlanError):
    def __init__(self, step_index, kind, residual):
        super().__init__(
            f"plan step {step_index} ({kind}) is unreachable, residual {residual:.4g} m"
        )
        self.step_index = step_index
        self.kind = kind
        self.residual = residual


class SceneError(Demo2PlanError):
    pass


class PlanObjectMismatch(Demo2PlanError):
    pass


class EmptyBatch(Demo2PlanError):
    pass
