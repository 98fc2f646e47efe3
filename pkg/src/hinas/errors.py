"""Exception types mapped to CLI exit codes."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (exit code 1)."""


class NumericalError(ArithmeticError):
    """Non-finite loss/gradient or an undefined metric (exit code 2)."""
