"""
Error hierarchy for FedSelectAPI
"""

from typing import Any, Dict, Optional

from cvxpy.error import SolverError as ConvexSolverError


class FedSelectError(Exception):
    """Base class for every error raised by the library"""


class ConfigurationError(FedSelectError):
    """Invalid or unreadable configuration document"""

    def __init__(self, message: str, locations: Optional[list] = None):
        super().__init__(message)
        self.locations = locations or []


class DomainError(FedSelectError, ValueError):
    """Input outside the mathematical domain of an operation"""


class ShapeError(FedSelectError, ValueError):
    """Mismatched lengths or dimensions"""


class DivergenceUndefinedError(FedSelectError):
    """KL divergence requested where absolute continuity fails"""


class NoEligibleClientsError(FedSelectError):
    """The KL filter left no client eligible for selection"""


class InfeasibleError(FedSelectError):
    """A constraint of the round problem cannot be met"""

    def __init__(self, message: str, constraint: str):
        super().__init__(f"{message} (constraint: {constraint})")
        self.constraint = constraint


class InfeasibleDecisionError(FedSelectError):
    """A decision selects a client with zero frequency or zero rate"""


class SolverError(FedSelectError):
    """The inner convex solver failed to certify a solution"""

    def __init__(self, message: str, iterate: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.iterate = iterate or {}


class RoundError(FedSelectError):
    """A training round failed; carries the round index and method"""

    def __init__(self, round_index: int, method: str, cause: Exception):
        super().__init__(f"round {round_index} ({method}) failed: {cause}")
        self.round_index = round_index
        self.method = method
        self.cause = cause


# failures a round or a command reports instead of crashing on
RECOVERABLE_ERRORS = (FedSelectError, ValueError, ArithmeticError, ConvexSolverError)
