"""Exception hierarchy shared by the model, simulator, estimator and CLI."""


class BiphotonError(Exception):
    """Base class for all package errors."""


class InvalidInputError(BiphotonError, ValueError):
    """A parameter is out of its admissible range or not finite."""


class RegimeError(BiphotonError, ValueError):
    """A regime-specific function was called with a config of another regime."""


class EmptyDensityError(BiphotonError, ValueError):
    """The sampling density integrates to zero over the window."""


class UndefinedVisibilityError(BiphotonError, ValueError):
    """Visibility requested for a sweep whose max + min is zero."""


class AlignmentError(BiphotonError, ValueError):
    """Two binned objects do not share the same bin grid."""


class DegenerateFitError(BiphotonError, ArithmeticError):
    """The normal matrix is singular; ``parameters`` lists the collinear ones."""

    def __init__(self, message, parameters=()):
        super().__init__(message)
        self.parameters = tuple(parameters)
