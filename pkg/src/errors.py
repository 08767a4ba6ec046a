"""Exception hierarchy; the CLI maps each family onto an exit code."""


class MagnetoplateError(Exception):
    exit_code = 2


class ConfigError(MagnetoplateError, ValueError):
    exit_code = 1

    def __init__(self, key: str, message: str) -> None:
        super().__init__(f'{key}: {message}')
        self.key = key


class GridError(MagnetoplateError, ValueError):
    exit_code = 1


class NumericalError(MagnetoplateError):
    exit_code = 2


class OrientationError(NumericalError):
    """A deformation gradient has det <= 0."""


class SpectralError(NumericalError):
    """A matrix expected to be SPD is not."""


class DegenerateDirectorError(NumericalError):
    """A director cannot be normalized."""


class DegenerateAxisError(NumericalError):
    """(adj F)·λ vanishes."""


class SolverStalledError(NumericalError):
    pass


class StepQualityError(NumericalError):

    def __init__(self, gap: float, slack: float, trace=None) -> None:
        super().__init__(f'incremental step gap {gap:.6g} exceeds slack {slack:.6g}')
        self.gap = gap
        self.slack = slack
        self.trace = trace


class AcceptanceError(MagnetoplateError):
    exit_code = 3


class InvariantError(MagnetoplateError, ValueError):
    """A model parameter violates its admissible range."""
    exit_code = 1

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f'{field}: {message}')
        self.field = field
