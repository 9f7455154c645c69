class ShapeError(ValueError):
    """Array dimensions do not line up with a network or contract."""


class NumericError(ArithmeticError):
    """A non-finite value showed up where a finite one is required."""


class ContractError(ValueError):
    """A precondition of an operation was violated (e.g. an empty batch)."""


class SpecError(ValueError):
    """An environment description is internally inconsistent."""


class ConfigError(ValueError):
    """Invalid experiment configuration. ``key`` names the offending entry."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")
