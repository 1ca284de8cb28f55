"""Named function families, random states and random maps used by tests and the CLI."""
from __future__ import annotations

import numpy as np

from .blockmap import Block, GridMap, choi_from_superop, superop_congruence, superop_from_choi, superop_functional
from .gridalg import Grid
from .states import State, make_state

# ---------------------------------------------------------------------------
# scalar function families on the grid
# ---------------------------------------------------------------------------


def _x(grid: Grid) -> np.ndarray:
    return grid.points


FAMILIES = {
    "constants": lambda x: [np.ones_like(x)],
    "linear": lambda x: [x],
    "quadratic": lambda x: [x**2],
    "cos": lambda x: [np.cos(np.pi * x)],
    "oscillators": lambda x: [np.cos(k * np.pi * x) for k in (1, 2, 3)],
    "default": lambda x: [np.ones_like(x), x, x**2, np.cos(np.pi * x)],
}

# functions with values in [0, 1], as the corner test requires
UNIT_FUNCTIONS = {
    "one": lambda x: np.ones_like(x),
    "ramp": lambda x: x,
    "bump": lambda x: 0.5 * (1 + np.cos(2 * np.pi * x)),
}


def function_family(spec, grid: Grid) -> list[np.ndarray]:
    """Resolve a family name (or list of names) to a list of value arrays."""
    names = [spec] if isinstance(spec, str) else list(spec)
    out = []
    for name in names:
        if name not in FAMILIES:
            raise KeyError(f"unknown function family {name!r}; choose from {sorted(FAMILIES)}")
        out.extend(FAMILIES[name](_x(grid)))
    return out


def unit_function(name: str, grid: Grid) -> np.ndarray:
    if name not in UNIT_FUNCTIONS:
        raise KeyError(f"unknown function {name!r}; choose from {sorted(UNIT_FUNCTIONS)}")
    return UNIT_FUNCTIONS[name](_x(grid))


# ---------------------------------------------------------------------------
# states
# ---------------------------------------------------------------------------


def random_density(n: int, rng: np.random.Generator, lo: float = 0.1, hi: float = 2.0) -> np.ndarray:
    """Random positive matrix with spectrum drawn uniformly from ``[lo, hi]``."""
    z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, _ = np.linalg.qr(z)
    w = rng.uniform(lo, hi, size=n)
    return (q * w) @ q.conj().T


def random_state(
    rng: np.random.Generator,
    n: int,
    m: int,
    spectrum: tuple[float, float] = (0.1, 2.0),
    levels: int | None = None,
    jitter: float | None = None,
    scattered: bool | None = None,
) -> State:
    """Clustered random state with invertible densities.

    The density takes ``levels`` base values, assigned either to contiguous runs
    or scattered across the grid, each point perturbed by a random Hermitian
    matrix of norm ``<= jitter``; spectra are clipped back into ``spectrum``.
    Weights are uniform on ``[0.5, 1.5]`` before normalization.
    """
    lo, hi = spectrum
    levels = int(rng.integers(2, 7)) if levels is None else levels
    jitter = float(10 ** rng.uniform(-7, -5)) if jitter is None else jitter
    scattered = bool(rng.integers(0, 2)) if scattered is None else scattered
    base = [random_density(n, rng, lo, hi) for _ in range(levels)]
    if scattered:
        labels = rng.integers(0, levels, size=m)
    else:
        cuts = np.sort(rng.choice(np.arange(1, m), size=levels - 1, replace=False))
        labels = np.searchsorted(cuts, np.arange(m), side="right")
    g = np.empty((m, n, n), dtype=complex)
    for k in range(m):
        e = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        e = e + e.conj().T
        a = base[labels[k]] + jitter * e / np.linalg.norm(e, 2)
        w, v = np.linalg.eigh(a)
        g[k] = (v * np.clip(w, lo, hi)) @ v.conj().T
    mu = rng.uniform(0.5, 1.5, size=m)
    mu = mu / mu.sum()
    # spectra stay in [lo, hi]; the trace normalization only rescales them
    phi = make_state(mu, g, Grid(m))
    return phi


def demo_state(n: int = 2, m: int = 64) -> State:
    """Bundled example with invertible, piecewise-smooth densities."""
    rng = np.random.default_rng(20240501)
    return random_state(rng, n, m, levels=4, jitter=1e-6, scattered=False)


def random_diagonal_state(rng: np.random.Generator, n: int, m: int, lo: float = 0.1, hi: float = 2.0) -> State:
    """State with diagonal densities, clustered like :func:`random_state`."""
    levels = int(rng.integers(2, 5))
    base = rng.uniform(lo, hi, size=(levels, n))
    labels = rng.integers(0, levels, size=m)
    g = np.zeros((m, n, n), dtype=complex)
    idx = np.arange(n)
    g[:, idx, idx] = base[labels]
    mu = rng.uniform(0.5, 1.5, size=m)
    return make_state(mu / mu.sum(), g, Grid(m))


# ---------------------------------------------------------------------------
# maps
# ---------------------------------------------------------------------------


def state_map(phi: State) -> GridMap:
    """``x -> phi(x) 1``: UCP, state-preserving, rank one."""
    n, m, nn = phi.n, phi.m, phi.n * phi.n
    w = phi.functional()
    ops = np.stack([superop_functional(w[j], np.eye(n)) for j in range(m)])
    idx = np.arange(m)
    return GridMap(phi.grid, n, (Block(idx, idx, np.broadcast_to(ops[None], (m, m, nn, nn))),), "dense", 1)


def random_cp_map(rng: np.random.Generator, n: int, m: int, kraus: int = 2) -> GridMap:
    """Dense map whose every component is a sum of ``kraus`` random congruences."""
    nn = n * n
    ops = np.zeros((m, m, nn, nn), dtype=complex)
    for k in range(m):
        for j in range(m):
            for _ in range(kraus):
                c = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2 * n)
                ops[k, j] += superop_congruence(c)
    return GridMap.from_dense(Grid(m), ops)


def random_map(rng: np.random.Generator, n: int, m: int, cp: bool) -> GridMap:
    """Random map that is CP when ``cp`` is true, otherwise clearly not CP.

    Non-CP maps subtract a rank-one term from one component's Choi matrix,
    pushing its smallest eigenvalue to between 0.3 and 1 times its norm below zero.
    """
    S = random_cp_map(rng, n, m)
    if cp:
        return S
    ops = np.array(S.blocks[0].ops)
    k, j = int(rng.integers(m)), int(rng.integers(m))
    choi = choi_from_superop(ops[k, j])
    v = rng.standard_normal(n * n) + 1j * rng.standard_normal(n * n)
    v /= np.linalg.norm(v)
    top = float(np.linalg.eigvalsh(choi)[-1])
    depth = rng.uniform(0.3, 1.0) * top
    # v* C v <= top, so subtracting (v*Cv + depth) v v* leaves v* C' v = -depth
    coeff = float(np.real(v.conj() @ choi @ v)) + depth
    choi = choi - coeff * np.outer(v, v.conj())
    ops[k, j] = superop_from_choi(choi)
    return GridMap.from_dense(S.grid, ops)


def random_positive_element(rng: np.random.Generator, m: int, dim: int, rank_one: bool = False) -> np.ndarray:
    """Pointwise positive element, shape ``(m, dim, dim)``; rank-one variants sit at a single point."""
    out = np.zeros((m, dim, dim), dtype=complex)
    if rank_one:
        v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        out[int(rng.integers(m))] = np.outer(v, v.conj())
        return out
    z = rng.standard_normal((m, dim, dim)) + 1j * rng.standard_normal((m, dim, dim))
    return z @ np.conj(np.swapaxes(z, 1, 2))


def pinching_map(grid: Grid, n: int) -> GridMap:
    """``x -> sum_k e_kk x e_kk`` at every point."""
    op = sum(superop_congruence(np.diag(np.eye(n)[k])) for k in range(n))
    return GridMap.pointwise(grid, op)


def diagonal_unitary_map(rng: np.random.Generator, grid: Grid, n: int) -> GridMap:
    """Pointwise conjugation by random diagonal unitaries; commutes with diagonal densities."""
    nn = n * n
    ops = np.empty((grid.m, nn, nn), dtype=complex)
    for k in range(grid.m):
        ops[k] = superop_congruence(np.diag(np.exp(2j * np.pi * rng.random(n))))
    idx = np.arange(grid.m)
    blocks = tuple(Block(idx[k : k + 1], idx[k : k + 1], ops[k][None, None]) for k in idx)
    return GridMap(grid, n, blocks, structure="pointwise")


def admissible_map(rng: np.random.Generator, phi: State, F=None) -> GridMap:
    """Random UCP map preserving the diagonal state ``phi``.

    A convex combination of the identity, the pinching, a diagonal unitary
    conjugation, ``x -> phi(x) 1`` and an approximator output.
    """
    from .approximator import build_T

    grid, n = phi.grid, phi.n
    F = function_family("default", grid) if F is None else F
    eps = float(rng.choice([0.4, 0.2]))
    T, _ = build_T(phi, F, eps, seed=int(rng.integers(2**31)), probes=[])
    parts = [
        GridMap.identity(grid, n),
        pinching_map(grid, n),
        diagonal_unitary_map(rng, grid, n),
        state_map(phi),
        T,
    ]
    w = rng.dirichlet(np.ones(len(parts)))
    out = parts[0].scaled(w[0])
    for p, c in zip(parts[1:], w[1:]):
        out = out + p.scaled(c)
    return out
