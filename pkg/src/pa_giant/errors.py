"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A constructor or operation argument is outside its admissible range."""


class RuleValidationError(ParameterError):
    """An attachment rule violates one or more of its invariants.

    Carries every violation found, not just the first one.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class BudgetExceededError(RuntimeError):
    """A sampler exceeded its configured jump/particle budget (runaway guard)."""


class TableCoverageError(ValueError):
    """A tabulated quantity was requested outside the table's grid."""


class TruncationError(ValueError):
    """State-space truncation too small for the requested tolerance.

    ``suggested_k_max`` is a usable replacement estimate.
    """

    def __init__(self, msg, suggested_k_max=None):
        super().__init__(msg)
        self.suggested_k_max = suggested_k_max
