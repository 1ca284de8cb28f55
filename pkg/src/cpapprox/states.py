"""States on M_n (x) C^m in density form.

A state is ``phi(h) = sum_j mu_j tau(g_j h_j)`` with ``tau`` the normalized
trace, probability weights ``mu`` and pointwise positive densities ``g``.
Faithfulness of the GNS vector state is certified through the density:
the state qualifies on the grid when every density with positive weight is
invertible, and :func:`faithfulness_margin` reports by how much.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NotAState, PatternScaleError
from .gridalg import Grid, MatrixFunction
from .matcore import CLAMP_TOL, min_eigenvalues

NORMALIZATION_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class State:
    grid: Grid
    mu: np.ndarray  # (m,)
    g: np.ndarray  # (m, n, n)
    note: str = ""

    @property
    def n(self) -> int:
        return self.g.shape[1]

    @property
    def m(self) -> int:
        return self.grid.m

    @property
    def support(self) -> np.ndarray:
        return np.nonzero(self.mu > 0)[0]

    def functional(self) -> np.ndarray:
        """Densities ``w_j = mu_j g_j / n`` with ``phi(h) = sum_j tr(w_j h_j)``."""
        return self.mu[:, None, None] * self.g / self.n

    def corner_mass(self, k: int) -> float:
        """``phi(e_kk (x) 1)``."""
        return float(np.real(np.sum(self.mu * self.g[:, k, k]))) / self.n


def make_state(mu, g, grid: Grid | None = None) -> State:
    """Validate and normalize a density pair.

    Weights must be nonnegative and densities Hermitian.  If the total
    ``sum mu_j tau(g_j)`` is not 1 the densities are rescaled and the factor
    is recorded in ``State.note``.
    """
    mu = np.asarray(mu, dtype=float)
    g = np.asarray(g, dtype=complex)
    if mu.ndim != 1 or g.ndim != 3 or g.shape[0] != len(mu) or g.shape[1] != g.shape[2]:
        raise DimensionError(f"incompatible shapes mu{mu.shape}, g{g.shape}")
    if grid is None:
        grid = Grid(len(mu))
    if grid.m != len(mu):
        raise DimensionError(f"{len(mu)} weights for a grid of {grid.m} points")
    if np.any(mu < 0) or not np.all(np.isfinite(mu)):
        raise NotAState("weights must be finite and nonnegative")
    total_mu = mu.sum()
    if total_mu <= 0:
        raise NotAState("weights sum to zero")
    skew = np.max(np.abs(g - np.conj(np.swapaxes(g, 1, 2))))
    if skew > 1e-12 * max(1.0, float(np.max(np.abs(g)))):
        raise NotAState(f"densities are not Hermitian (defect {skew:.3e})")
    g = 0.5 * (g + np.conj(np.swapaxes(g, 1, 2)))
    notes = []
    if abs(total_mu - 1.0) > NORMALIZATION_TOL:
        mu = mu / total_mu
        notes.append(f"weights rescaled by {1.0 / total_mu:.17g}")
    supp = mu > 0
    lam = min_eigenvalues(g[supp])
    if lam.size and lam.min() < -CLAMP_TOL:
        bad = int(np.nonzero(supp)[0][int(np.argmin(lam))])
        raise NotAState(f"density at point {bad} has eigenvalue {lam.min():.6e}")
    n = g.shape[1]
    mass = float(np.real(np.sum(mu * np.trace(g, axis1=1, axis2=2)))) / n
    if mass <= 0:
        raise NotAState("densities integrate to zero")
    if abs(mass - 1.0) > NORMALIZATION_TOL:
        g = g / mass
        notes.append(f"densities rescaled by {1.0 / mass:.17g}")
    return State(grid, mu, g, "; ".join(notes))


def _check(phi: State, h: MatrixFunction):
    if h.m != phi.m or h.n != phi.n:
        raise DimensionError(f"element of M_{h.n}(x)C^{h.m} for a state on M_{phi.n}(x)C^{phi.m}")


def eval_state(phi: State, h: MatrixFunction) -> complex:
    _check(phi, h)
    return complex(np.einsum("j,jab,jba->", phi.mu, phi.g, h.values) / phi.n)


def cond_exp(phi: State, h: MatrixFunction) -> np.ndarray:
    """``E(h) = sum_j mu_j h_j``: the weight-averaging expectation onto M_n."""
    _check(phi, h)
    return np.einsum("j,jab->ab", phi.mu, h.values)


def is_diagonal(phi: State, tol: float = 0.0) -> bool:
    g = phi.g[phi.support]
    off = g - np.einsum("jaa->ja", g)[:, :, None] * np.eye(phi.n)[None]
    return bool(np.max(np.abs(off), initial=0.0) <= tol)


def faithfulness_margin(phi: State) -> float:
    """Smallest eigenvalue of a density with positive weight."""
    lam = min_eigenvalues(phi.g[phi.support])
    return float(max(lam.min(), 0.0)) if lam.size else 0.0


# ---------------------------------------------------------------------------
# balanced patterns and the two-corner state
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PatternSet:
    grid: Grid
    members: np.ndarray  # sorted grid indices
    balance_level: int

    @property
    def level(self) -> int:
        return self.grid.dyadic_level

    @property
    def mask(self) -> np.ndarray:
        out = np.zeros(self.grid.m, dtype=bool)
        out[self.members] = True
        return out


def pattern_balance_violations(pattern: PatternSet, up_to: int | None = None) -> list[tuple[int, int, int]]:
    """Dyadic intervals ``(level, start, count)`` whose member count is not half their size."""
    up_to = pattern.balance_level if up_to is None else up_to
    mask = pattern.mask
    bad = []
    for level in range(up_to + 1):
        for cell in pattern.grid.dyadic_cells(level):
            c = int(mask[cell.start : cell.stop].sum())
            if 2 * c != len(cell):
                bad.append((level, cell.start, c))
    return bad


def balanced_pattern(level: int, balance_level: int) -> PatternSet:
    """Alternating pattern: members are the even (0-based) grid indices.

    Every dyadic interval of length at least 2 holds exactly half members, so
    the pattern is balanced up to level ``level - 1``; ``balance_level`` must
    not exceed that.
    """
    if level < 1 or not 0 <= balance_level < level:
        raise PatternScaleError(f"need 0 <= L0 < L and L >= 1, got L={level}, L0={balance_level}")
    grid = Grid.dyadic(level)
    return PatternSet(grid, np.arange(0, grid.m, 2), balance_level)


def rudin_state(pattern: PatternSet) -> State:
    """Diagonal state ``phi(f) = mean(f_11 on X) + mean(f_22 off X)`` (masses over the grid)."""
    grid = pattern.grid
    mask = pattern.mask
    g = np.zeros((grid.m, 2, 2), dtype=complex)
    g[mask, 0, 0] = 2.0
    g[~mask, 1, 1] = 2.0
    mu = np.full(grid.m, 1.0 / grid.m)
    return State(grid, mu, g, "two-corner pattern state")


def pattern_of(phi: State) -> np.ndarray:
    """Recover the member mask of a two-corner state from its densities."""
    if phi.n != 2:
        raise DimensionError("two-corner states live on M_2")
    return np.real(phi.g[:, 0, 0]) > np.real(phi.g[:, 1, 1])
