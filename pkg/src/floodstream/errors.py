"""Exception types shared across the package."""


class FloodError(Exception):
    """Base class for all package errors."""


class ShapeError(FloodError, ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloodError, ValueError):
    """A gradient or value became NaN/Inf."""


class ScheduleError(FloodError, ValueError):
    pass


class MotionFormatError(FloodError, ValueError):
    """Malformed motion, checkpoint or prompt-schedule file."""


class PromptError(FloodError, ValueError):
    pass


class DivergenceError(FloodError, RuntimeError):
    """Training loss exploded past the abort threshold."""

    def __init__(self, message: str, step: int, loss: float, initial: float):
        super().__init__(message)
        self.step = step
        self.loss = loss
        self.initial = initial


class ConfigError(FloodError, ValueError):
    pass
