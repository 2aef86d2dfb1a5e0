"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration (bad widths, counts, flags)."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class NumericError(ArithmeticError):
    """Non-finite values or a failed numerical procedure."""


class HypothesisError(ValueError):
    """A theorem hypothesis does not hold for the supplied constants."""

    def __init__(self, message, product=None):
        super().__init__(message)
        self.product = product
