"""Exception hierarchy shared by every ivgn subsystem.

The CLI maps these onto exit codes: config/usage -> 1, data -> 2, numeric -> 3.
"""


class IvgnError(Exception):
    pass


class ConfigError(IvgnError, ValueError):
    pass


class DimensionError(ConfigError):
    pass


class SchemeParseError(ConfigError):
    def __init__(self, message: str, text: str, position: int):
        super().__init__(f"{message} at position {position} in {text!r}")
        self.text = text
        self.position = position


class UsageError(IvgnError, ValueError):
    pass


class GraphError(IvgnError, RuntimeError):
    pass


class DomainError(IvgnError, ValueError):
    def __init__(self, op: str, index: tuple, value: float):
        super().__init__(f"{op}: invalid argument {value!r} at index {index}")
        self.op = op
        self.index = index
        self.value = value


class DataError(IvgnError):
    pass


class CompatibilityError(DataError):
    pass


class CheckpointError(DataError):
    pass


class NumericError(IvgnError, ArithmeticError):
    def __init__(self, message: str, **diagnostics):
        detail = ", ".join(f"{k}={v}" for k, v in diagnostics.items())
        super().__init__(f"{message} ({detail})" if detail else message)
        self.diagnostics = diagnostics
