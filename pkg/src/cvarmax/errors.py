"""Exception taxonomy shared by the whole toolkit.

The CLI maps these onto exit codes: parameter/configuration problems exit
with 2, instance-file problems with 3, and tripped safety guards with 4.
"""


class CvarmaxError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(CvarmaxError, ValueError):
    """An argument is out of its documented range or inconsistent."""


class InvalidElementError(ParameterError):
    """An element index does not belong to the ground set."""


class MatroidViolationError(ParameterError):
    """A set handed to a constrained evaluator is not independent."""


class ZeroSingletonError(CvarmaxError):
    """Curvature is undefined because some singleton value is ~0."""


class GuardError(CvarmaxError):
    """A size guard tripped (enumeration or simulation too large)."""


class GenerationError(CvarmaxError):
    """Instance generation could not satisfy its invariants."""


class UnreachableError(CvarmaxError):
    """No vehicle can reach some demand on the given network."""


class InstanceFormatError(CvarmaxError):
    """An instance/network file does not match its documented schema."""


class EvaluationError(CvarmaxError):
    """An objective evaluation failed inside the solver."""
