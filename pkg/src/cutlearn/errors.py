"""Exception hierarchy shared by all modules."""


class CutLearnError(Exception):
    """Base class for every error raised by this package."""


class ParamOutOfRange(CutLearnError, ValueError):
    def __init__(self, field, value, bound, side):
        self.field = field
        self.value = value
        self.bound = bound
        self.side = side
        super().__init__(f"{field}={value!r} violates {side} bound {bound!r}")


class NonFiniteState(CutLearnError, FloatingPointError):
    pass


class NonFiniteGradient(CutLearnError, FloatingPointError):
    pass


class EmptyOverlap(CutLearnError, ValueError):
    pass


class OutOfRangeGrid(CutLearnError, ValueError):
    pass


class DimensionMismatch(CutLearnError, ValueError):
    pass


class NonDivisibleTimestep(CutLearnError, ValueError):
    def __init__(self, period_name, period, step_name, step):
        self.pair = (period_name, step_name)
        super().__init__(
            f"{period_name}={period!r} is not an integer multiple of {step_name}={step!r}"
        )


class InvalidParam(CutLearnError, ValueError):
    pass


class EmptyProfile(CutLearnError, ValueError):
    pass


class NoCalibratedItems(CutLearnError, RuntimeError):
    pass


class EpisodeFinished(CutLearnError, RuntimeError):
    pass


class ShapeMismatch(CutLearnError, ValueError):
    pass


class EmptyBatch(CutLearnError, ValueError):
    pass


class EmptyBuffer(CutLearnError, RuntimeError):
    pass


class NoEpisodes(CutLearnError, ValueError):
    pass


class ConfigError(CutLearnError, ValueError):
    pass


class ParseError(CutLearnError, ValueError):
    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class NonMonotonicTime(ParseError):
    pass


class NonFiniteValue(ParseError):
    pass


class MissingPolicy(CutLearnError, FileNotFoundError):
    pass


class MissingHeldOutItem(CutLearnError, ValueError):
    pass
