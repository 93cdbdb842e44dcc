"""Exception types shared across the package."""


class CFBenchError(Exception):
    """Base class for all errors raised by cfbench."""


# data / panel
class MalformedRow(CFBenchError, ValueError):
    pass


class DuplicateQuarter(CFBenchError, ValueError):
    pass


class UnknownFeatureColumn(CFBenchError, KeyError):
    def __str__(self):  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class MissingDenominator(CFBenchError, ValueError):
    pass


class ZeroVariance(CFBenchError, ValueError):
    pass


class UnknownCompany(CFBenchError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


# models
class EmptySeries(CFBenchError, ValueError):
    pass


class SeriesTooShort(CFBenchError, ValueError):
    pass


class NonConvergence(CFBenchError, RuntimeError):
    pass


class UnstableParams(CFBenchError, RuntimeError):
    pass


class NoValidWindows(CFBenchError, ValueError):
    pass


class NonFiniteLoss(CFBenchError, FloatingPointError):
    pass


# evaluation
class EmptyReport(CFBenchError, ValueError):
    pass


class CalendarTooShort(CFBenchError, ValueError):
    pass


class DegenerateTarget(CFBenchError, UserWarning):
    """Warned (not raised) when RSE/R2 are undefined for a zero-variance target."""


# backtest
class UniverseTooSmall(CFBenchError, ValueError):
    pass


class MissingPrice(CFBenchError, UserWarning):
    """Warned when a held position has no next-quarter price and is liquidated."""


class DegenerateReference(CFBenchError, ValueError):
    pass


# configuration
class ConfigError(CFBenchError, ValueError):
    pass
