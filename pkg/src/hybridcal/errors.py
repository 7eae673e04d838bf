"""Exception hierarchy for the calibration pipeline.

Every error carries a ``stage`` attribute so batch tooling can emit
machine-readable failure records.
"""


class HybridcalError(Exception):
    """Base class; ``exit_code`` drives the CLI's process exit status."""

    exit_code = 1
    stage = "unknown"

    def __init__(self, message, stage=None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage


class InputError(HybridcalError):
    """Bad input data or file schema."""

    exit_code = 2


class DegenerateGeometryError(HybridcalError):
    """Geometric configuration does not determine a solution."""

    exit_code = 3


class OptimizationError(HybridcalError):
    """An iterative solver failed to make progress."""

    exit_code = 4


# --- input / schema ---------------------------------------------------------

class InsufficientData(InputError):
    pass


class ConfigInvalid(InputError):
    pass


class SchemaMismatch(InputError):
    pass


class IoError(InputError):
    pass


# --- degenerate geometry ----------------------------------------------------

class SingularConfiguration(DegenerateGeometryError):
    pass


class DegenerateConfiguration(DegenerateGeometryError):
    pass


class DegenerateObservation(DegenerateGeometryError):
    pass


class DegenerateMotion(DegenerateGeometryError):
    pass


class DegenerateRegistration(DegenerateGeometryError):
    pass


class InsufficientViews(DegenerateGeometryError):
    pass


class CheiralityFailure(DegenerateGeometryError):
    pass


class BehindCamera(DegenerateGeometryError):
    pass


class EmptyGraph(DegenerateGeometryError):
    pass


class GaugeUnderconstrained(DegenerateGeometryError):
    pass


class OutOfWorkingRange(DegenerateGeometryError):
    pass


class OutOfDomain(DegenerateGeometryError):
    pass


class OutsideFieldOfView(DegenerateGeometryError):
    pass


class EliminationSingular(DegenerateGeometryError):
    pass


class NoRealSolutions(DegenerateGeometryError):
    pass


class AllCandidatesRejected(DegenerateGeometryError):
    pass


class InsufficientCoverage(DegenerateGeometryError):
    pass


class WindowTooSmall(InputError):
    pass


# --- optimization -----------------------------------------------------------

class Diverged(OptimizationError):
    pass


class NotConverged(OptimizationError):
    pass


class ConsensusFailure(OptimizationError):
    pass
