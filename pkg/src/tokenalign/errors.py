"""Exception hierarchy shared by every module.

Each class maps to a distinct CLI exit code (see ``tokenalign.cli``).
"""


class AlignError(Exception):
    """Base class for all library errors."""

    kind = "error"


class DimensionError(AlignError, ValueError):
    kind = "dimension"


class ParameterError(AlignError, ValueError):
    kind = "parameter"


class ContractError(AlignError, ValueError):
    kind = "contract"


class DegenerateDataError(AlignError, ValueError):
    kind = "degenerate"


class MarginalError(AlignError, ValueError):
    kind = "marginal"


class SolverError(AlignError, RuntimeError):
    kind = "solver"

    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class BatchError(AlignError, ValueError):
    kind = "batch"


class TrainingError(AlignError, RuntimeError):
    kind = "training"

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class FormatError(AlignError, ValueError):
    """Malformed binary/CSV/JSON input."""

    kind = "format"


class NonFiniteError(AlignError, FloatingPointError):
    """An operation produced NaN or Inf."""

    kind = "nonfinite"


class ConfigError(AlignError, ValueError):
    """Experiment configuration failed schema validation."""

    kind = "config"
