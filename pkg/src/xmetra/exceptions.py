"""Exception hierarchy shared by every subpackage."""


class XMetraError(Exception):
    """Base class for all errors raised by xmetra."""


class ShapeError(XMetraError, ValueError):
    """A primitive received operands whose shapes do not conform."""


class ContractError(XMetraError, ValueError):
    """A caller violated a documented precondition."""


class TapeUsageError(XMetraError, RuntimeError):
    """A differentiation tape was used incorrectly (e.g. backward twice)."""


class InputError(XMetraError, ValueError):
    """Invalid model or sampler input (empty sequence, out-of-vocab id...)."""


class ValidationError(XMetraError, ValueError):
    """A record failed a schema invariant."""


class ParseError(XMetraError, ValueError):
    """A corpus or config file could not be parsed."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class SpecError(XMetraError, ValueError):
    """An episode spec is internally inconsistent."""


class SamplingError(XMetraError, ValueError):
    """A pool cannot satisfy the requested episode."""


class ConfigError(XMetraError, ValueError):
    """An experiment, meta or generator configuration is invalid."""


class DivergenceError(XMetraError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, message, step=None, task=None, stage=None):
        self.step = step
        self.task = task
        self.stage = stage
        super().__init__(message)
