"""Exception hierarchy shared across the package.

Errors split into three families so the CLI can map them onto exit codes:
usage errors are raised by argparse itself, data/validation errors derive
from :class:`ValidationError`, and numerical failures derive from
:class:`NumericalFailure`.
"""


class CelldxError(Exception):
    """Base class for all package errors."""


class ValidationError(CelldxError):
    """Bad inputs, malformed files, or contract violations (CLI exit 2)."""


class NumericalFailure(CelldxError):
    """Diverged or failed numerical procedures (CLI exit 3)."""


# -- curves ------------------------------------------------------------

class DegenerateCurve(ValidationError):
    """Capacity span too small to resample."""


class OutOfRange(ValidationError):
    """Query voltage outside the curve's voltage span."""


class NotInvertible(ValidationError):
    """Voltage is not monotone, so capacity-at-voltage is ambiguous."""


class InvalidWindow(ValidationError):
    """Smoothing window incompatible with the curve length."""


class WindowError(ValidationError):
    """Operating window violates the configured throughput floor."""


# -- mechanistic -------------------------------------------------------

class EmptyWindow(ValidationError):
    """State gives no discharge window above the cutoff voltage."""


class InvalidState(ValidationError):
    """State outside hard physical validity (non-positive capacity etc.)."""


class Infeasible(ValidationError):
    """Lithium inventory exceeds what the electrodes can hold."""


# -- synthetic fleet ---------------------------------------------------

class ScenarioError(ValidationError):
    """Degradation scenario produced a physically impossible cell."""


class ParseError(ValidationError):
    """Malformed dataset or config file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


# -- tensors / training ------------------------------------------------

class ShapeError(ValidationError):
    """Tensor shapes incompatible with the requested operation."""


class NumericalError(NumericalFailure):
    """Non-finite value encountered in a computation graph."""


class TrainingDiverged(NumericalFailure):
    """Validation loss became non-finite during training."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"validation loss diverged at epoch {epoch}")


# -- diagnosis / prognosis ---------------------------------------------

class ArtifactMismatch(ValidationError):
    """Input layout or provenance chain does not match the artifact."""


class SplitError(ValidationError):
    """Dataset cannot be split group-disjointly as required."""


class CensoredCell(ValidationError):
    """Cell never reaches end of life within its record."""


# -- swarm fitting -----------------------------------------------------

class FitError(NumericalFailure):
    """Swarm fit failed (for example every particle infeasible)."""
