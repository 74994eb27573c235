"""Exception hierarchy shared across the package."""


class CaseBanditError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(CaseBanditError, ValueError):
    pass


class NumericalDegeneracyError(CaseBanditError, ArithmeticError):
    """The design inverse lost positive definiteness."""


class ConvergenceError(CaseBanditError, RuntimeError):
    def __init__(self, message, grad_norm):
        super().__init__(f"{message} (gradient inf-norm {grad_norm:.3e})")
        self.grad_norm = grad_norm


class DataCorruptionError(CaseBanditError, ValueError):
    pass


class ParseError(CaseBanditError, ValueError):
    def __init__(self, message, lineno):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class ConsistencyError(CaseBanditError, AssertionError):
    """An internal identity (e.g. the regret decomposition) was violated."""


class ConfigError(CaseBanditError, ValueError):
    def __init__(self, message, key_path=""):
        text = f"{key_path}: {message}" if key_path else message
        super().__init__(text)
        self.key_path = key_path
