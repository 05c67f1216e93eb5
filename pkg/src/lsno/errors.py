"""Exception hierarchy.

Every error carries a short ``category`` string; the command-line front end
prints failures as ``error:<category>:<message>``.
"""


class LsnoError(Exception):
    category = "internal"


class DimensionError(LsnoError, ValueError):
    category = "dimension"


class ParameterError(LsnoError, ValueError):
    category = "parameter"


class DomainError(LsnoError, ValueError):
    category = "domain"


class ContractError(LsnoError, RuntimeError):
    category = "contract"


class NotCovered(LsnoError):
    """Input lies outside the reach of every epsilon-net center."""

    category = "not_covered"


class ConvergenceError(LsnoError, RuntimeError):
    category = "convergence"

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class StabilityError(LsnoError, RuntimeError):
    category = "stability"


class FormatError(LsnoError, ValueError):
    category = "format"


class IngestionError(LsnoError, ValueError):
    category = "ingestion"


class TrainingDiverged(LsnoError, RuntimeError):
    category = "diverged"
