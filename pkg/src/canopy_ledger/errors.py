"""Exception hierarchy shared by all pipeline stages."""


class CanopyLedgerError(Exception):
    """Base class for every error raised by this package."""


class FormatError(CanopyLedgerError, ValueError):
    """A binary container has a bad magic, version or dtype code."""


class LengthError(CanopyLedgerError, ValueError):
    """A binary payload is shorter than its header promises."""


class AlignmentError(CanopyLedgerError, ValueError):
    """Two grids that must share geometry do not."""


class EmptyExtentError(CanopyLedgerError, ValueError):
    """Source and target extents do not overlap."""


class BoundsError(CanopyLedgerError, IndexError):
    """A pixel position lies outside its grid."""


class GeometryError(CanopyLedgerError, ValueError):
    """A polygon is degenerate or self-intersecting."""


class EmptyDataError(CanopyLedgerError, ValueError):
    """An operation was given no usable observations."""


class ShapeError(CanopyLedgerError, ValueError):
    """Array dimensions do not match what a model expects."""


class ConvergenceError(CanopyLedgerError, RuntimeError):
    """MCMC diagnostics or training failed to converge."""


class TrainingDivergedError(ConvergenceError):
    """Loss became non-finite during optimisation."""


class ConfigError(CanopyLedgerError, ValueError):
    """Configuration failed schema validation."""


class DependencyError(CanopyLedgerError, RuntimeError):
    """A pipeline stage ran before the stage that produces its inputs."""

    def __init__(self, stage, required):
        self.stage = stage
        self.required = required
        super().__init__(
            f"stage '{stage}' needs outputs of '{required}'; run '{required}' first"
        )
