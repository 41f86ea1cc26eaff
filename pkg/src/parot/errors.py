"""Exception hierarchy shared by all parot modules."""


class ParotError(Exception):
    """Base class for every error raised by parot."""


class ConfigurationError(ParotError):
    pass


class EvaluationError(ParotError):
    pass


class SolverError(ParotError):
    """Newton-type iteration failed; ``best`` carries the last iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DegeneracyError(ParotError):
    pass


class DensityError(ParotError):
    pass


class RangeError(ParotError):
    pass


class PositivityError(ParotError):
    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class ObliquenessError(ParotError):
    pass


class BoundaryError(ParotError):
    pass


class AssemblyError(ParotError):
    pass


class StepFailure(ParotError):
    pass


class ContinuationError(ParotError):
    def __init__(self, message, last_good_s=0.0):
        super().__init__(message)
        self.last_good_s = last_good_s


class CoverageError(ParotError):
    pass


class SamplingError(ParotError):
    pass


class DimensionError(ParotError):
    pass


class SizeError(ParotError):
    pass


class OracleInapplicableError(ParotError):
    pass


class FlowVerdictError(ParotError):
    """A flow ended with a verdict other than ``converged``."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
