"""Exception hierarchy. CLI exit codes hang off ``exit_code``."""


class ShortkitError(Exception):
    exit_code = 1


class ConfigError(ShortkitError, ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    exit_code = 2

    def __init__(self, message: str, path: str = ""):
        self.message = message
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class InputError(ShortkitError, ValueError):
    exit_code = 2


class UnsupportedOperationError(ShortkitError):
    exit_code = 2


class MetricUndefinedError(ShortkitError, ValueError):
    """A metric cannot be computed on the given data (e.g. a class is absent)."""

    exit_code = 4


class TrainingDivergenceError(ShortkitError, FloatingPointError):
    exit_code = 4

    def __init__(self, message: str, step: int):
        self.step = step
        super().__init__(f"{message} (step {step})")


class InternalConsistencyError(ShortkitError, RuntimeError):
    exit_code = 4


class UnderpoweredError(ShortkitError):
    """Too few included sweep points to produce a verdict."""

    exit_code = 4


class SweepDegenerateError(ShortkitError):
    exit_code = 4
