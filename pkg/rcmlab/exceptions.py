"""
Exception hierarchy shared by all rcmlab modules.
"""

from typing import Iterable, List, Optional

__all__ = [
    "RcmLabError",
    "ConfigError",
    "LatticeMismatchError",
    "StabilityError",
    "OffGridError",
    "SupportError",
    "DisconnectedError",
    "ScanExhaustedError",
    "NonConvergedError",
]


class RcmLabError(Exception):
    """Base class for every error raised by rcmlab."""


class ConfigError(RcmLabError, ValueError):
    """Invalid experiment configuration, carrying every problem found."""

    def __init__(self, errors: Iterable[str]):
        self.errors: List[str] = list(errors)
        summary = "; ".join(self.errors) if self.errors else "invalid configuration"
        super().__init__(summary)


class LatticeMismatchError(RcmLabError, ValueError):
    """Two fields or an environment and a field live on different lattices."""


class StabilityError(RcmLabError, ValueError):
    """Time step violates the explicit Euler bound dt <= 1/(2d)."""


class OffGridError(RcmLabError, ValueError):
    """A requested time is not an integer multiple of the time step."""


class SupportError(RcmLabError, ValueError):
    """A local observable does not fit inside the torus."""


class DisconnectedError(RcmLabError):
    """Edge endpoints are disconnected in the positive-conductance graph."""

    def __init__(self, edge: int, message: Optional[str] = None):
        self.edge = edge
        super().__init__(
            message or f"Endpoints of edge {edge} are disconnected in the resistance graph"
        )


class ScanExhaustedError(RcmLabError):
    """Detour scan ran past half the torus without finding a usable copy."""

    def __init__(self, edge: int, steps: int):
        self.edge = edge
        self.steps = steps
        super().__init__(
            f"Detour scan for edge {edge} exhausted after {steps} steps in every direction"
        )


class NonConvergedError(RcmLabError):
    """Iterative solver hit its iteration cap before reaching the tolerance."""

    def __init__(self, residual: float, iterations: int, tol: float):
        self.residual = residual
        self.iterations = iterations
        self.tol = tol
        super().__init__(
            f"Solver did not converge: relative residual {residual:.3e} > {tol:.1e} "
            f"after {iterations} iterations"
        )
