"""
GM Solver - Errors
Exception hierarchy shared by services and commands
"""

from typing import List, Optional, Sequence


class GMError(Exception):
    """Base class for all solver errors"""


class ConfigError(GMError):
    """Invalid run configuration or violated user-facing precondition"""


class GridError(ConfigError):
    """Invalid grid specification"""


class ConstantsError(ConfigError):
    """Constants do not satisfy the lower bound required for the rectangle"""


class SingularityError(GMError):
    """A denominator vanishes at some node"""

    def __init__(self, message: str, node: Optional[int] = None):
        super().__init__(message)
        self.node = node


class ConvergenceError(GMError):
    """Iterative method did not reach its tolerance"""

    def __init__(self, message: str, history: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.history: List[float] = list(history or [])


class EnvelopeError(GMError):
    """Auxiliary solution violates one of its envelope inequalities"""

    def __init__(self, message: str, inequality: str, node: int):
        super().__init__(message)
        self.inequality = inequality
        self.node = node


class RectangleError(GMError):
    """Lower bound exceeds upper bound at some node"""

    def __init__(self, message: str, node: int):
        super().__init__(message)
        self.node = node


class AdmissibilityError(GMError):
    """Degree map vanishes (within tolerance) on the region boundary"""

    def __init__(self, message: str, witness=None, margin: float = 0.0):
        super().__init__(message)
        self.witness = witness
        self.margin = margin


class DegreeError(GMError):
    """Degree estimation requested outside the dense regime"""
