"""Exception hierarchy shared by every subpackage."""


class DistillKitError(Exception):
    """Base class for all library errors."""


class ShapeError(DistillKitError, ValueError):
    """Operand dimensions are incompatible with the requested operation."""


class NumericDomainError(DistillKitError, ArithmeticError):
    """A NaN or Inf entered or left a computation."""


class ContractError(DistillKitError, ValueError):
    """A call violated a documented precondition."""


class OracleInvalidError(DistillKitError):
    """The function handed to the gradient oracle is not deterministic."""


class ConfigError(DistillKitError, ValueError):
    """A model, run or objective configuration is invalid."""


class LengthError(DistillKitError, ValueError):
    """A waveform is shorter than the frontend receptive field."""


class WavFormatError(DistillKitError, ValueError):
    """Malformed or unsupported RIFF/WAVE content."""


class MalformedHeaderError(WavFormatError):
    pass


class UnsupportedCodecError(WavFormatError):
    pass


class SampleRateError(WavFormatError):
    pass


class TableFormatError(DistillKitError, ValueError):
    """A results table CSV is missing structure or holds non-numeric cells."""


class TrainingAbort(DistillKitError, RuntimeError):
    """Training stopped because the loss or a gradient became non-finite."""
