"""Finite-rank UCP state-preserving approximations of the identity.

Given a state with invertible densities, a finite family of scalar test
functions and a tolerance ``eps``, :func:`build_T` returns

    T(h) = sum_c  E(rho_c g)^{-1/2} E(rho_c g^{1/2} h g^{1/2}) E(rho_c g)^{-1/2} (x) rho_c

where ``E`` is the weight average, ``g`` the state density and the ``rho_c``
a partition of unity over cells on which both the test functions and the
density are nearly constant.  ``T`` is unital, completely positive (each term
is a sum of congruences), preserves the state exactly and has rank at most
``(number of cells) * n^2``.

The tolerance budget is split as ``eps/8`` for test-function oscillation on
domain cells, ``eps/8`` for density spread on range cells, and ``7 eps / 8`` for
the defect on constant functions ``b (x) 1``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .blockmap import Block, GridMap, defect_probe
from .errors import CpApproxError, NotGridFaithful, RangeCellTooCoarse
from .gridalg import matrix_unit
from .matcore import (
    min_eigenvalues,
    op_norms,
    psd_inv_sqrt,
    psd_inv_sqrt_stack,
    psd_sqrt_stack,
    random_unitary,
)
from .states import State, faithfulness_margin

LADDER_DEPTH = 60
HULL_SAMPLES = 100
MAX_REFINEMENTS = 40


@dataclass(frozen=True)
class DomainPartition:
    cells: tuple[range, ...]
    osc_bound: float

    def labels(self, m: int) -> np.ndarray:
        out = np.empty(m, dtype=int)
        for i, c in enumerate(self.cells):
            out[c.start : c.stop] = i
        return out


def partition_domain(F: Sequence, bound: float) -> DomainPartition:
    """Greedy left-to-right maximal runs on which every ``f`` in ``F`` varies by ``<= bound``."""
    if bound <= 0:
        raise ValueError("bound must be positive")
    F = [np.asarray(f) for f in F]
    if not F:
        raise ValueError("need at least one test function")
    m = len(F[0])
    if any(len(f) != m for f in F):
        raise ValueError("test functions have different lengths")
    cells = []
    start = 0
    while start < m:
        lo = [f[start] for f in F]
        hi = [f[start] for f in F]
        stop = start + 1
        while stop < m:
            ok = True
            for i, f in enumerate(F):
                v = f[stop]
                if np.iscomplexobj(f):
                    seg = f[start : stop + 1]
                    if np.max(np.abs(seg - v)) > bound or _complex_osc(seg) > bound:
                        ok = False
                        break
                else:
                    if max(hi[i], v) - min(lo[i], v) > bound:
                        ok = False
                        break
            if not ok:
                break
            for i, f in enumerate(F):
                if not np.iscomplexobj(f):
                    lo[i] = min(lo[i], f[stop])
                    hi[i] = max(hi[i], f[stop])
            stop += 1
        cells.append(range(start, stop))
        start = stop
    return DomainPartition(tuple(cells), float(bound))


def _complex_osc(seg) -> float:
    return float(np.max(np.abs(seg[:, None] - seg[None, :])))


def modulus_inverse_root(s: float, eps: float, gnorm: float) -> float:
    """Distance below which inverse square roots stay within ``eps / (8 gnorm)``.

    For ``a, b >= s`` one has ``||a^{-1/2} - b^{-1/2}|| <= s^{-1} ||a - b||^{1/2}``, so
    ``||a - b|| <= (eps s / (8 gnorm))^2`` is sufficient.
    """
    if s <= 0:
        raise ValueError("s must be positive")
    if s > gnorm * (1 + 1e-12):
        raise ValueError("s must not exceed gnorm")
    return (eps * s / (8.0 * gnorm)) ** 2


# ---------------------------------------------------------------------------
# range cells
# ---------------------------------------------------------------------------


@dataclass
class RangeCells:
    gamma: float
    eta: float
    cells: list  # index arrays into the grid
    diameters: list
    delta_cells: int = 0  # the first ``delta_cells`` cells sit above the delta level
    worst_hull_deviation: float = 0.0
    refinements: int = 0


def _cluster(idx: np.ndarray, dist: np.ndarray, eta: float) -> list[list[int]]:
    """Greedy complete-linkage clustering: join the first cell whose members are all closer than eta."""
    cells: list[list[int]] = []
    for p in idx:
        for cell in cells:
            if np.all(dist[p, cell] < eta):
                cell.append(int(p))
                break
        else:
            cells.append([int(p)])
    return cells


def hull_deviation(gs: np.ndarray, rng: np.random.Generator, samples: int, floor: float) -> float:
    """Largest sampled ``||a^{1/2} b^{-1/2} - 1||`` over convex combinations of ``gs``."""
    if len(gs) < 2:
        return 0.0
    n = gs.shape[1]
    wa = rng.dirichlet(np.ones(len(gs)), size=samples)
    wb = rng.dirichlet(np.ones(len(gs)), size=samples)
    # include the raw pairs too: extreme points carry the largest spread
    a = np.einsum("sk,kab->sab", wa, gs)
    b = np.einsum("sk,kab->sab", wb, gs)
    ra = psd_sqrt_stack(a)
    ib = psd_inv_sqrt_stack(b, floor)
    dev = op_norms(ra @ ib - np.eye(n)[None])
    worst = float(dev.max())
    i, j = np.triu_indices(len(gs), 1)
    if len(i) > samples:
        pick = rng.choice(len(i), size=samples, replace=False)
        i, j = i[pick], j[pick]
    rv = psd_sqrt_stack(gs[i]) @ psd_inv_sqrt_stack(gs[j], floor) - np.eye(n)[None]
    return max(worst, float(op_norms(rv).max()))


def partition_range(
    phi: State,
    gamma: float,
    eps: float,
    delta: float | None = None,
    seed: int = 0,
    samples: int = HULL_SAMPLES,
) -> RangeCells:
    """Cluster the densities with ``lambda_min >= gamma`` into cells of small spread.

    Cells have operator-norm diameter ``< eta = eps^2 gamma / 64``, which forces
    ``||a^{1/2} b^{-1/2} - 1|| < eps / 8`` on their convex hulls; that consequence
    is re-checked by sampling, and a failed check halves ``eta`` and re-clusters.
    When ``delta`` is given, points at or above ``delta`` are clustered first and
    separately, so the coarse cells survive unchanged in the fine partition.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    rng = np.random.default_rng(seed)
    supp = phi.support
    lam = min_eigenvalues(phi.g[supp])
    good = supp[lam >= gamma]
    if delta is not None:
        hi = supp[lam >= delta]
        lo = supp[(lam >= gamma) & (lam < delta)]
    else:
        hi, lo = good, good[:0]
    g = phi.g
    flat = g[good]
    dist = np.zeros((phi.m, phi.m))
    if len(good):
        dist[np.ix_(good, good)] = op_norms(flat[:, None] - flat[None, :])
    eta = eps * eps * gamma / 64.0
    bound = eps / 8.0
    for refinement in range(MAX_REFINEMENTS):
        hi_cells = _cluster(hi, dist, eta)
        lo_cells = _cluster(lo, dist, eta)
        cells = [np.array(c) for c in hi_cells + lo_cells]
        worst = 0.0
        try:
            for c in cells:
                dev = hull_deviation(g[c], rng, samples, gamma * (1 - 1e-9))
                worst = max(worst, dev)
                if dev >= bound:
                    raise RangeCellTooCoarse(dev, bound)
        except RangeCellTooCoarse:
            eta /= 2.0
            continue
        diam = [float(dist[np.ix_(c, c)].max()) for c in cells]
        return RangeCells(gamma, eta, cells, diam, len(hi_cells), worst, refinement)
    raise RangeCellTooCoarse(worst, bound)


# ---------------------------------------------------------------------------
# thresholds and cells
# ---------------------------------------------------------------------------


@dataclass
class Thresholds:
    delta: float
    gamma: float
    r: float
    gnorm: float
    range_cells: RangeCells
    designations: list  # per domain cell: index into range_cells.cells
    bad: np.ndarray  # grid indices with positive weight and lambda_min < gamma

    def __iter__(self):
        return iter((self.delta, self.gamma, self.r))


def choose_thresholds(phi: State, P: DomainPartition, eps: float, seed: int = 0) -> Thresholds:
    """Pick ``delta`` from the ladder ``||g|| / 2^k``, then ``gamma`` and ``r``.

    ``delta`` is the largest ladder value such that every domain cell carries
    positive weight on ``{lambda_min(g) >= delta}``.  When the state has a positive
    margin, ``gamma = min(delta, margin)`` and the bad set is empty.  Otherwise
    ``gamma`` is the smallest positive ``lambda_min`` and the weight of the
    remaining singular points must fit the budget
    ``(1/2) min(F(delta r / 2), eps delta r / (8 ||g||))``.
    """
    supp = phi.support
    lam = np.full(phi.m, -np.inf)
    lam[supp] = min_eigenvalues(phi.g[supp])
    gnorm = float(op_norms(phi.g[supp]).max())
    if gnorm <= 0:
        raise NotGridFaithful("density vanishes identically")
    labels = P.labels(phi.m)
    delta = None
    for k in range(LADDER_DEPTH):
        d = gnorm / 2.0**k
        mass = np.bincount(labels, weights=phi.mu * (lam >= d), minlength=len(P.cells))
        if np.all(mass > 0):
            delta = d
            break
    if delta is None:
        raise NotGridFaithful("no ladder value leaves positive weight in every domain cell")
    margin = faithfulness_margin(phi)
    if margin > 0:
        gamma = min(delta, margin)
    else:
        positive = lam[supp][lam[supp] > 0]
        gamma = min(delta, float(positive.min()))
    R = partition_range(phi, gamma, eps, delta=delta, seed=seed)
    designations = []
    masses = []
    for cell in P.cells:
        best, best_mass = -1, 0.0
        for i in range(R.delta_cells):
            members = R.cells[i]
            inside = members[(members >= cell.start) & (members < cell.stop)]
            w = float(phi.mu[inside].sum())
            if w > best_mass:
                best, best_mass = i, w
        designations.append(best)
        masses.append(best_mass)
    r = float(min(masses))
    bad = supp[lam[supp] < gamma]
    if len(bad):
        budget = 0.5 * min(modulus_inverse_root(delta * r / 2, eps, gnorm), eps * delta * r / (8 * gnorm))
        if phi.mu[bad].sum() >= budget:
            raise NotGridFaithful(
                f"singular weight {phi.mu[bad].sum():.3e} exceeds the bad-set budget {budget:.3e}"
            )
    return Thresholds(delta, gamma, r, gnorm, R, designations, bad)


@dataclass
class YCell:
    domain_cell: int
    first: bool
    range_cell: int
    indices: np.ndarray
    core: np.ndarray  # indices whose densities lie in the range cell
    mass: float  # weight of the whole cell
    core_mass: float


@dataclass
class YCells:
    cells: list
    rho: np.ndarray  # (cells, m) partition of unity

    def __len__(self):
        return len(self.cells)


def indicator_rho(cells: Sequence[YCell], m: int) -> np.ndarray:
    rho = np.zeros((len(cells), m))
    for c, yc in enumerate(cells):
        rho[c, yc.indices] = 1.0
    return rho


def smoothed_rho(cells: Sequence[YCell], m: int, spread: float = 0.25) -> np.ndarray:
    """Tent-smoothed indicators: each point leaks ``spread`` of its weight to both neighbours."""
    if not 0 <= spread <= 0.5:
        raise ValueError("spread must lie in [0, 1/2]")
    ind = indicator_rho(cells, m)
    raw = ind.copy()
    raw[:, 1:] += spread * ind[:, :-1]
    raw[:, :-1] += spread * ind[:, 1:]
    return raw / raw.sum(axis=0, keepdims=True)


def build_y_cells(P: DomainPartition, R: RangeCells, th: Thresholds, phi: State) -> YCells:
    """Split each domain cell by range cell; singular and weightless points join the first piece."""
    m = phi.m
    range_label = np.full(m, -1)
    for i, c in enumerate(R.cells):
        range_label[c] = i
    cells = []
    for b, dom in enumerate(P.cells):
        idx = np.arange(dom.start, dom.stop)
        ib = th.designations[b]
        first_mask = (range_label[idx] == ib) | (range_label[idx] == -1)
        first = idx[first_mask]
        core = idx[range_label[idx] == ib]
        if len(core) == 0 or phi.mu[core].sum() <= 0:
            raise CpApproxError(f"domain cell {b} has an empty designated piece")
        cells.append(YCell(b, True, ib, first, core, float(phi.mu[first].sum()), float(phi.mu[core].sum())))
        for i in np.unique(range_label[idx]):
            if i < 0 or i == ib:
                continue
            piece = idx[range_label[idx] == i]
            w = float(phi.mu[piece].sum())
            if w > 0:
                cells.append(YCell(b, False, int(i), piece, piece, w, w))
    covered = np.concatenate([c.indices for c in cells])
    if len(covered) != m or not np.array_equal(np.sort(covered), np.arange(m)):
        raise CpApproxError("cells do not partition the grid")
    return YCells(cells, indicator_rho(cells, m))


# ---------------------------------------------------------------------------
# the map
# ---------------------------------------------------------------------------


@dataclass
class ApproximatorDiagnostics:
    eps: float
    delta: float
    gamma: float
    r: float
    gnorm: float
    domain_cells: int
    range_cells: int
    cell_count: int
    rank_bound: int
    eta: float
    bad_weight: float
    spectral_floors: list = field(default_factory=list)
    required_floors: list = field(default_factory=list)
    sandwich_deviations: list = field(default_factory=list)
    relative_sandwich_deviations: list = field(default_factory=list)
    probe_defect: float | None = None
    matrix_probe_defect: float | None = None
    smoothed: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def default_probes(n: int, count: int = 20, seed: int = 0) -> list[np.ndarray]:
    """Matrix units plus ``count`` Haar-random unitaries (all of operator norm 1)."""
    rng = np.random.default_rng(seed)
    units = [matrix_unit(n, i, j) for i in range(n) for j in range(n)]
    return units + [random_unitary(n, rng) for _ in range(count)]


def build_T(
    phi: State,
    F: Sequence,
    eps: float,
    *,
    smoothed: bool = False,
    spread: float = 0.25,
    seed: int = 0,
    probes: Sequence[np.ndarray] | None = None,
) -> tuple[GridMap, ApproximatorDiagnostics]:
    if eps <= 0:
        raise ValueError("eps must be positive")
    F = [np.asarray(f) for f in F]
    P = partition_domain(F, eps / 8.0)
    th = choose_thresholds(phi, P, eps, seed=seed)
    Y = build_y_cells(P, th.range_cells, th, phi)
    rho = smoothed_rho(Y.cells, phi.m, spread) if smoothed else Y.rho
    n, nn = phi.n, phi.n * phi.n
    supp = phi.support
    roots = np.zeros_like(phi.g)
    roots[supp] = psd_sqrt_stack(phi.g[supp])

    diag = ApproximatorDiagnostics(
        eps=eps,
        delta=th.delta,
        gamma=th.gamma,
        r=th.r,
        gnorm=th.gnorm,
        domain_cells=len(P.cells),
        range_cells=len(th.range_cells.cells),
        cell_count=len(Y),
        rank_bound=len(Y) * nn,
        eta=th.range_cells.eta,
        bad_weight=float(phi.mu[th.bad].sum()),
        smoothed=smoothed,
    )
    blocks = []
    for c, yc in enumerate(Y.cells):
        where = np.nonzero(rho[c] > 0)[0]
        weights = phi.mu[where] * rho[c, where]
        M = np.einsum("j,jab->ab", weights, phi.g[where])
        floor = th.delta * th.r / 2 if yc.first else th.gamma * yc.mass / 2
        inv_root = psd_inv_sqrt(M, floor)
        A = inv_root[None] @ roots[where]  # M^{-1/2} g_j^{1/2}
        ops = weights[:, None, None] * np.einsum("jab,jcd->jacbd", A, A.conj()).reshape(len(where), nn, nn)
        if smoothed:
            block_ops = rho[c, where][:, None, None, None] * ops[None]
        else:
            block_ops = np.broadcast_to(ops[None], (len(where), len(where), nn, nn))
        blocks.append(Block(where, where, block_ops))

        diag.spectral_floors.append(float(np.linalg.eigvalsh(M)[0]))
        diag.required_floors.append(float(floor))
        core = yc.core[phi.mu[yc.core] > 0]
        s = float(phi.mu[core].sum())
        dev = op_norms(roots[core] @ inv_root[None] - s ** -0.5 * np.eye(n)[None]).max()
        diag.sandwich_deviations.append(float(dev))
        diag.relative_sandwich_deviations.append(float(dev * np.sqrt(s)))

    T = GridMap(phi.grid, n, tuple(blocks), structure="cell-block", rank_bound=len(Y) * nn)
    if probes is None:
        probes = default_probes(n, seed=seed)
    if probes:
        diag.probe_defect = defect_probe(T, F, probes)
        diag.matrix_probe_defect = defect_probe(T, [np.ones(phi.m)], probes)
    return T, diag


def sandwich_defect_bound(eps: float) -> float:
    """The constant-function defect guaranteed by construction."""
    return 7.0 * eps / 8.0
