"""Preferential attachment networks with concave attachment rules.

Tools for generating the networks, measuring component structure and
percolation behaviour, simulating the killed multitype branching random
walk that describes local neighbourhoods, and evaluating the spectral
criteria that decide existence and robustness of the giant component.
"""

__version__ = "0.1.0"

from .rules import (
    AttachmentRule,
    make_linear,
    make_sqrt,
    make_table,
    rule_from_json,
)
from .errors import (
    ParameterError,
    RuleValidationError,
    BudgetExceededError,
    TableCoverageError,
    TruncationError,
)

__all__ = [
    "AttachmentRule",
    "make_linear",
    "make_sqrt",
    "make_table",
    "rule_from_json",
    "ParameterError",
    "RuleValidationError",
    "BudgetExceededError",
    "TableCoverageError",
    "TruncationError",
    "__version__",
]
