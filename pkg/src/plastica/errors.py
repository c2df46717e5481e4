"""Exception hierarchy. CLI exit codes are derived from these classes."""


class PlasticaError(Exception):
    exit_code = 2


class ScenarioError(PlasticaError):
    """Malformed or semantically invalid scenario."""
    exit_code = 1


class NumericError(PlasticaError):
    """Non-finite values, blow-up, or other integration failure."""
    exit_code = 2


class DomainError(NumericError, ValueError):
    """Evaluation requested outside the domain of a sampled object."""

    def __init__(self, message, value=None, interval=None):
        super().__init__(message)
        self.value = value
        self.interval = interval


class GridExitError(NumericError):
    """A trajectory left the bounding box of the field grid."""

    def __init__(self, message, time, state, partial=None):
        super().__init__(message)
        self.time = time
        self.state = state
        self.partial = partial


class InvarianceError(NumericError):
    """A cloud point left the declared absorbing ball during a sweep."""

    def __init__(self, message, witness, time):
        super().__init__(message)
        self.witness = witness
        self.time = time
