"""Exception hierarchy shared by every module in the package."""


class HdsRnnError(Exception):
    """Base class for all package errors."""


class DimensionError(HdsRnnError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(HdsRnnError, RuntimeError):
    """A caller violated an operation's precondition."""


class ConfigurationError(HdsRnnError, ValueError):
    pass


class InsufficientDataError(HdsRnnError, ValueError):
    pass


class AlignmentError(HdsRnnError, ValueError):
    """Timestamps cannot be mapped onto the seasonal slot grid."""


class DegenerateSensorError(HdsRnnError, ValueError):
    def __init__(self, sensor):
        super().__init__(f"sensor {sensor!r} has zero variance on the training split")
        self.sensor = sensor


class RankDeficiencyError(HdsRnnError, ArithmeticError):
    pass


class TrainingDivergedError(HdsRnnError, RuntimeError):
    def __init__(self, epoch, message=None):
        super().__init__(message or f"training diverged (non-finite loss) at epoch {epoch}")
        self.epoch = epoch
