class ModelValidationError(ValueError):
    """A model parameterisation violates one of the preset inequalities."""


class ConfigurationError(ValueError):
    """A configuration cannot be used (bad keys, bad values, degenerate rates)."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class EstimationError(RuntimeError):
    """Monte Carlo estimation could not produce a value."""


class NumericError(ArithmeticError):
    """A numerical routine failed to converge or hit a guard."""
