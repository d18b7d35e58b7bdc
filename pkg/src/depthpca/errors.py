"""Exception hierarchy.

Every error carries a short ``code`` used by the command line front end
when it reports failures, and an ``exit_status`` for the process.
"""


class DepthPCAError(Exception):
    code = "Error"
    exit_status = 1


class InvalidInput(DepthPCAError, ValueError):
    code = "InvalidInput"
    exit_status = 2


class DegenerateData(DepthPCAError, ValueError):
    code = "DegenerateData"
    exit_status = 2


class DegenerateModel(DepthPCAError, ValueError):
    code = "DegenerateModel"
    exit_status = 2


class NotPositiveDefinite(DepthPCAError, ValueError):
    code = "NotPositiveDefinite"
    exit_status = 2


class NumericalFailure(DepthPCAError, ArithmeticError):
    code = "NumericalFailure"
    exit_status = 3


class ConvergenceFailure(DepthPCAError, ArithmeticError):
    """An iterative solver ran out of iterations.

    ``result`` holds the last iterate (whatever object the solver would
    have returned) so callers can inspect how far it got.
    """

    code = "ConvergenceFailure"
    exit_status = 3

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
