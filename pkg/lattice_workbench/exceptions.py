"""
Exceptions raised by the lattice workbench.
The command-line driver maps them onto exit codes; library code only raises.
"""


class WorkbenchError(Exception):
    """Base class for all workbench errors"""


class SingularBasisError(WorkbenchError, ValueError):
    """Basis determinant is zero up to the configured tolerance"""


class DimensionMismatchError(WorkbenchError, ValueError):
    """Operands have incompatible shapes"""


class NotSymmetricError(WorkbenchError, ValueError):
    """A Gram matrix input is not symmetric"""


class NotUnimodularError(WorkbenchError, ValueError):
    """Integer matrix whose exact determinant is not +1 or -1"""


class NotSpecialLinearError(NotUnimodularError):
    """Integer matrix whose exact determinant is not +1"""


class InfeasibleBezoutError(WorkbenchError, ValueError):
    """The gcd of the given values does not divide the target"""


class CoprimeSearchError(WorkbenchError, RuntimeError):
    """No shift t within the search limit made the last row coprime"""


class IterationLimitError(WorkbenchError, RuntimeError):
    """LLL did not terminate within its iteration cap"""


class DegenerateScoresError(WorkbenchError, ValueError):
    """All off-diagonal scores vanish"""


class NonScalarLossError(WorkbenchError, ValueError):
    """Backward pass requested from a non-scalar node"""


class DomainError(WorkbenchError, ValueError):
    """Function evaluated outside its domain (e.g. log of a non-positive value)"""


class TrainingDivergedError(WorkbenchError, RuntimeError):
    """Training loss became non-finite"""

    def __init__(self, message, epoch=None, seed=None):
        super().__init__(message)
        self.epoch = epoch
        self.seed = seed


class DataFormatError(WorkbenchError, ValueError):
    """Malformed matrix, dataset or checkpoint file"""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class EmptyReportError(WorkbenchError, ValueError):
    """Evaluation report without any matrices"""
