"""The algebra M_n (x) C(X) discretized on a uniform midpoint grid of [0, 1].

A :class:`MatrixFunction` stores one ``n x n`` matrix per grid point as an
array of shape ``(m, n, n)``.  Matrix-unit indices are 0-based throughout.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .matcore import min_eigenvalues, op_norms


@dataclass(frozen=True)
class Grid:
    m: int
    dyadic_level: int | None = None

    def __post_init__(self):
        if self.m < 1:
            raise DimensionError("grid needs at least one point")
        if self.dyadic_level is not None and 2 ** self.dyadic_level != self.m:
            raise DimensionError(f"m={self.m} is not 2**{self.dyadic_level}")

    @classmethod
    def dyadic(cls, level: int) -> Grid:
        return cls(2 ** level, level)

    @property
    def points(self) -> np.ndarray:
        j = np.arange(1, self.m + 1)
        return (2 * j - 1) / (2 * self.m)

    def dyadic_cells(self, level: int) -> list[range]:
        """Index ranges of the dyadic intervals of the given level."""
        if self.dyadic_level is None or not 0 <= level <= self.dyadic_level:
            raise DimensionError(f"level {level} unavailable on this grid")
        width = self.m >> level
        return [range(s, s + width) for s in range(0, self.m, width)]


@dataclass(frozen=True, eq=False)
class MatrixFunction:
    grid: Grid
    values: np.ndarray  # (m, n, n) complex

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.ndim != 3 or v.shape[1] != v.shape[2]:
            raise DimensionError(f"values must have shape (m, n, n), got {v.shape}")
        if v.shape[0] != self.grid.m:
            raise DimensionError(f"{v.shape[0]} values for a grid of {self.grid.m} points")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def m(self) -> int:
        return self.grid.m

    def _check(self, other: MatrixFunction):
        if self.values.shape != other.values.shape:
            raise DimensionError(f"shape mismatch {self.values.shape} vs {other.values.shape}")

    def __add__(self, other: MatrixFunction) -> MatrixFunction:
        self._check(other)
        return MatrixFunction(self.grid, self.values + other.values)

    def __sub__(self, other: MatrixFunction) -> MatrixFunction:
        self._check(other)
        return MatrixFunction(self.grid, self.values - other.values)

    def __mul__(self, scalar) -> MatrixFunction:
        return MatrixFunction(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> MatrixFunction:
        return MatrixFunction(self.grid, -self.values)

    def allclose(self, other: MatrixFunction, atol: float = 1e-12) -> bool:
        self._check(other)
        return bool(np.allclose(self.values, other.values, rtol=0.0, atol=atol))


def unit(grid: Grid, n: int) -> MatrixFunction:
    return MatrixFunction(grid, np.broadcast_to(np.eye(n, dtype=complex), (grid.m, n, n)).copy())


def zero(grid: Grid, n: int) -> MatrixFunction:
    return MatrixFunction(grid, np.zeros((grid.m, n, n), dtype=complex))


def matrix_unit(n: int, i: int, j: int) -> np.ndarray:
    e = np.zeros((n, n), dtype=complex)
    e[i, j] = 1.0
    return e


def tensor_embed(b, f, grid: Grid | None = None) -> MatrixFunction:
    """The element ``b (x) f``: ``values[k] = f[k] * b``."""
    b = np.asarray(b, dtype=complex)
    f = np.asarray(f)
    if grid is None:
        grid = Grid(len(f))
    if f.ndim != 1 or len(f) != grid.m:
        raise DimensionError(f"function has {f.shape} values, grid has {grid.m} points")
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise DimensionError(f"b must be square, got {b.shape}")
    return MatrixFunction(grid, f[:, None, None] * b[None, :, :])


def corner_extract(h: MatrixFunction, i: int, j: int) -> np.ndarray:
    if not (0 <= i < h.n and 0 <= j < h.n):
        raise IndexError(f"corner ({i}, {j}) out of range for n={h.n}")
    return h.values[:, i, j].copy()


def sup_norm(h: MatrixFunction) -> float:
    return float(np.max(op_norms(h.values))) if h.m else 0.0


def multiply(a: MatrixFunction, b: MatrixFunction) -> MatrixFunction:
    a._check(b)
    return MatrixFunction(a.grid, a.values @ b.values)


def adjoint(a: MatrixFunction) -> MatrixFunction:
    return MatrixFunction(a.grid, np.conj(np.swapaxes(a.values, 1, 2)))


def pointwise_min_eigenvalue(h: MatrixFunction) -> np.ndarray:
    return min_eigenvalues(h.values)


def is_pointwise_psd(h: MatrixFunction, tol: float = 0.0) -> bool:
    herm_defect = np.max(np.abs(h.values - adjoint(h).values))
    return bool(herm_defect <= max(tol, 1e-12) and np.min(pointwise_min_eigenvalue(h)) >= -tol)


def oscillation(f, start: int = 0, stop: int | None = None) -> float:
    """``max |f(x) - f(y)|`` over indices in ``[start, stop)``."""
    seg = np.asarray(f)[start:stop]
    if seg.size == 0:
        return 0.0
    if np.iscomplexobj(seg):
        return float(np.max(np.abs(seg[:, None] - seg[None, :])))
    return float(np.max(seg) - np.min(seg))
