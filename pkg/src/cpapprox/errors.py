"""Exception hierarchy shared by every module."""
from __future__ import annotations


class CpApproxError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CpApproxError, ValueError):
    pass


class EigenError(CpApproxError, ArithmeticError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class NotPSD(CpApproxError, ValueError):
    def __init__(self, eigenvalue: float):
        super().__init__(f"matrix is not positive semidefinite: lambda_min={eigenvalue:.6e}")
        self.eigenvalue = eigenvalue


class SpectralFloorViolation(CpApproxError, ArithmeticError):
    def __init__(self, lambda_min: float, floor: float):
        super().__init__(f"lambda_min={lambda_min:.6e} is below the floor {floor:.6e}")
        self.lambda_min = lambda_min
        self.floor = floor


class NotAState(CpApproxError, ValueError):
    pass


class NotGridFaithful(CpApproxError, ValueError):
    pass


class RangeCellTooCoarse(CpApproxError, ArithmeticError):
    def __init__(self, worst: float, bound: float):
        super().__init__(f"sampled hull deviation {worst:.6e} >= {bound:.6e}")
        self.worst = worst
        self.bound = bound


class DegenerateCorner(CpApproxError, ValueError):
    def __init__(self, k: int):
        super().__init__(f"R(e_kk x 1) vanishes for k={k}")
        self.k = k


class PreconditionError(CpApproxError, ValueError):
    """A named hypothesis of a construction does not hold.

    ``hypothesis`` is a short machine-readable tag such as ``"RangeSmoothness"``
    or ``"phi-preservation"``; ``witness`` carries the offending number.
    """

    def __init__(self, hypothesis: str, detail: str = "", witness: float | None = None):
        msg = hypothesis if not detail else f"{hypothesis}: {detail}"
        super().__init__(msg)
        self.hypothesis = hypothesis
        self.witness = witness


class PatternScaleError(CpApproxError, ValueError):
    pass


class CoverError(CpApproxError, ValueError):
    pass
