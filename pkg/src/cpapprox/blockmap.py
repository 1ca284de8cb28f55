"""Linear maps on M_n (x) C^m and their complete-positivity checks.

A map ``S`` is described by its components ``S_kj : M_n -> M_n`` with
``S(h)_k = sum_j S_kj(h_j)``.  Each component is an ``n^2 x n^2`` matrix
acting on row-major vectorizations, ``vec(S_kj(x)) = L_kj @ x.reshape(-1)``.

Components are stored as a sum of rectangular blocks over (output, input)
index sets.  A dense map is one block; the approximation maps built in
:mod:`cpapprox.approximator` are one block per partition cell, which keeps
storage and verification linear in the number of cells.

Complete positivity is decided component by component: ``M_n (x) C^m`` is the
direct sum of ``m`` copies of ``M_n`` under orthogonal central projections,
so a map into the k-th summand is CP iff each restriction to a j-th summand
is CP.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import DimensionError
from .gridalg import Grid, MatrixFunction, sup_norm, tensor_embed, unit
from .matcore import min_eigenvalues

# ---------------------------------------------------------------------------
# superoperator helpers
# ---------------------------------------------------------------------------


def superop_identity(n: int) -> np.ndarray:
    return np.eye(n * n, dtype=complex)


def superop_congruence(c) -> np.ndarray:
    """Superoperator of ``x -> c x c*``."""
    c = np.asarray(c, dtype=complex)
    return np.kron(c, c.conj())


def superop_transpose(n: int) -> np.ndarray:
    p = np.zeros((n * n, n * n), dtype=complex)
    for a in range(n):
        for b in range(n):
            p[b * n + a, a * n + b] = 1.0
    return p


def superop_functional(w, out) -> np.ndarray:
    """Superoperator of ``x -> tr(w x) * out``."""
    w = np.asarray(w, dtype=complex)
    out = np.asarray(out, dtype=complex)
    return np.outer(out.reshape(-1), w.T.reshape(-1))


def apply_superop(op, x) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    n = x.shape[-1]
    return (np.asarray(op) @ x.reshape(-1)).reshape(n, n)


def choi_from_superop(ops) -> np.ndarray:
    """Choi matrix ``C[(a,b),(c,d)] = (S(e_ac))_bd``; batched over leading axes."""
    ops = np.asarray(ops)
    nn = ops.shape[-1]
    n = int(round(np.sqrt(nn)))
    lead = ops.shape[:-2]
    t = ops.reshape(lead + (n, n, n, n))
    k = len(lead)
    axes = tuple(range(k)) + (k + 2, k, k + 3, k + 1)
    return t.transpose(axes).reshape(lead + (nn, nn))


def superop_from_choi(choi) -> np.ndarray:
    choi = np.asarray(choi)
    nn = choi.shape[-1]
    n = int(round(np.sqrt(nn)))
    lead = choi.shape[:-2]
    t = choi.reshape(lead + (n, n, n, n))  # (a, b, c, d)
    k = len(lead)
    axes = tuple(range(k)) + (k + 1, k + 3, k, k + 2)  # (b, d, a, c)
    return t.transpose(axes).reshape(lead + (nn, nn))


# ---------------------------------------------------------------------------
# GridMap
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Block:
    rows: np.ndarray  # output grid indices
    cols: np.ndarray  # input grid indices
    ops: np.ndarray  # (len(rows), len(cols), n*n, n*n); may be a broadcast view

    def __post_init__(self):
        object.__setattr__(self, "rows", np.asarray(self.rows, dtype=int))
        object.__setattr__(self, "cols", np.asarray(self.cols, dtype=int))
        ops = np.asarray(self.ops)
        if ops.shape[:2] != (len(self.rows), len(self.cols)):
            raise DimensionError(f"block ops shape {ops.shape} does not match index sets")
        object.__setattr__(self, "ops", ops)


@dataclass(frozen=True, eq=False)
class GridMap:
    grid: Grid
    n: int
    blocks: tuple[Block, ...]
    structure: str = "dense"
    rank_bound: int | None = None
    _overlap: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        nn = self.n * self.n
        for b in self.blocks:
            if b.ops.shape[2:] != (nn, nn):
                raise DimensionError(f"component shape {b.ops.shape[2:]} != ({nn}, {nn})")
            if len(b.rows) and (b.rows.min() < 0 or b.rows.max() >= self.grid.m):
                raise DimensionError("block row index out of range")
            if len(b.cols) and (b.cols.min() < 0 or b.cols.max() >= self.grid.m):
                raise DimensionError("block column index out of range")

    @property
    def m(self) -> int:
        return self.grid.m

    # -- construction ------------------------------------------------------

    @classmethod
    def from_dense(cls, grid: Grid, ops, **kw) -> GridMap:
        ops = np.asarray(ops, dtype=complex)
        n = int(round(np.sqrt(ops.shape[-1])))
        idx = np.arange(grid.m)
        return cls(grid, n, (Block(idx, idx, ops),), **kw)

    @classmethod
    def from_components(cls, grid: Grid, n: int, comps: dict, **kw) -> GridMap:
        """Build from ``{(k, j): n^2 x n^2 superoperator}``; missing entries are zero."""
        blocks = tuple(
            Block([k], [j], np.asarray(op, dtype=complex)[None, None]) for (k, j), op in sorted(comps.items())
        )
        return cls(grid, n, blocks, structure=kw.pop("structure", "sparse"), **kw)

    @classmethod
    def identity(cls, grid: Grid, n: int) -> GridMap:
        return cls.pointwise(grid, superop_identity(n), structure="identity")

    @classmethod
    def pointwise(cls, grid: Grid, op, **kw) -> GridMap:
        """The map applying the same superoperator at every grid point."""
        op = np.asarray(op, dtype=complex)
        n = int(round(np.sqrt(op.shape[-1])))
        idx = np.arange(grid.m)
        # one block per point keeps the (k, j) support diagonal
        blocks = tuple(Block(idx[k : k + 1], idx[k : k + 1], op[None, None]) for k in idx)
        kw.setdefault("structure", "pointwise")
        return cls(grid, n, blocks, **kw)

    @classmethod
    def zero(cls, grid: Grid, n: int) -> GridMap:
        return cls(grid, n, (), structure="zero", rank_bound=0)

    def scaled(self, c: complex) -> GridMap:
        return GridMap(
            self.grid, self.n, tuple(Block(b.rows, b.cols, c * b.ops) for b in self.blocks), self.structure, self.rank_bound
        )

    def __add__(self, other: GridMap) -> GridMap:
        if self.grid != other.grid or self.n != other.n:
            raise DimensionError("cannot add maps on different algebras")
        rb = None
        if self.rank_bound is not None and other.rank_bound is not None:
            rb = self.rank_bound + other.rank_bound
        return GridMap(self.grid, self.n, self.blocks + other.blocks, "sum", rb)

    # -- evaluation --------------------------------------------------------

    def apply(self, h: MatrixFunction) -> MatrixFunction:
        if h.grid.m != self.m or h.n != self.n:
            raise DimensionError(f"element of M_{h.n}(x)C^{h.m} given to a map on M_{self.n}(x)C^{self.m}")
        nn = self.n * self.n
        flat = h.values.reshape(self.m, nn)
        out = np.zeros((self.m, nn), dtype=complex)
        for b in self.blocks:
            if b.ops.strides[0] == 0 and len(b.rows) > 1:
                # every output row shares the same column operators
                one = np.einsum("jpq,jq->p", b.ops[0], flat[b.cols])
                contrib = np.broadcast_to(one, (len(b.rows), nn))
            else:
                contrib = np.einsum("kjpq,jq->kp", b.ops, flat[b.cols])
            np.add.at(out, b.rows, contrib)
        return MatrixFunction(h.grid, out.reshape(self.m, self.n, self.n))

    __call__ = apply

    def pullback(self, w: np.ndarray) -> np.ndarray:
        """Densities of the functional ``h -> sum_k tr(w_k S(h)_k)``.

        ``w`` has shape ``(m, n, n)``; the result ``w'`` satisfies
        ``sum_j tr(w'_j h_j) = sum_k tr(w_k S(h)_k)``.
        """
        nn = self.n * self.n
        wt = np.swapaxes(np.asarray(w, dtype=complex), 1, 2).reshape(self.m, nn)
        out = np.zeros((self.m, nn), dtype=complex)
        for b in self.blocks:
            if b.ops.strides[0] == 0 and len(b.rows) > 1:
                contrib = np.einsum("jpq,p->jq", b.ops[0], wt[b.rows].sum(axis=0))
            else:
                contrib = np.einsum("kjpq,kp->jq", b.ops, wt[b.rows])
            np.add.at(out, b.cols, contrib)
        return np.swapaxes(out.reshape(self.m, self.n, self.n), 1, 2)

    def overlapping(self) -> bool:
        """True if some (k, j) component is covered by more than one block."""
        if not self._overlap:
            occ = np.zeros((self.m, self.m), dtype=np.int32)
            hit = False
            for b in self.blocks:
                sub = occ[np.ix_(b.rows, b.cols)]
                if np.any(sub):
                    hit = True
                    break
                occ[np.ix_(b.rows, b.cols)] = 1
            self._overlap.append(hit)
        return self._overlap[0]

    def component(self, k: int, j: int) -> np.ndarray:
        nn = self.n * self.n
        acc = np.zeros((nn, nn), dtype=complex)
        for b in self.blocks:
            rk = np.nonzero(b.rows == k)[0]
            cj = np.nonzero(b.cols == j)[0]
            for r in rk:
                for c in cj:
                    acc += b.ops[r, c]
        return acc

    def components(self) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Yield ``(rows, cols, ops)`` groups whose (k, j) supports are disjoint."""
        if not self.overlapping():
            for b in self.blocks:
                yield b.rows, b.cols, b.ops
            return
        merged: dict[tuple[int, int], np.ndarray] = {}
        for b in self.blocks:
            for r, k in enumerate(b.rows):
                for c, j in enumerate(b.cols):
                    key = (int(k), int(j))
                    if key in merged:
                        merged[key] = merged[key] + b.ops[r, c]
                    else:
                        merged[key] = np.array(b.ops[r, c])
        for (k, j), op in sorted(merged.items()):
            yield np.array([k]), np.array([j]), op[None, None]

    def support_size(self) -> int:
        return sum(len(r) * len(c) for r, c, _ in self.components())

    def assemble(self) -> np.ndarray:
        """Dense ``(m n^2) x (m n^2)`` matrix of the map on row-major stacked vectors."""
        nn = self.n * self.n
        big = np.zeros((self.m, nn, self.m, nn), dtype=complex)
        for b in self.blocks:
            big[np.ix_(b.rows, np.arange(nn), b.cols, np.arange(nn))] += np.transpose(b.ops, (0, 2, 1, 3))
        return big.reshape(self.m * nn, self.m * nn)


def component_choi(S: GridMap, k: int, j: int) -> np.ndarray:
    if not (0 <= k < S.m and 0 <= j < S.m):
        raise IndexError(f"component ({k}, {j}) out of range")
    return choi_from_superop(S.component(k, j))


class UcpReport(NamedTuple):
    unitality_defect: float
    min_choi_eigenvalue: float
    is_ucp: bool
    worst_component: tuple[int, int]
    choi_hermiticity_defect: float = 0.0


def verify_ucp(S: GridMap, tol: float = 1e-9) -> UcpReport:
    one = unit(S.grid, S.n)
    unitality = sup_norm(S.apply(one) - one)
    worst = np.inf
    worst_at = (0, 0)
    herm = 0.0
    covered = 0
    for rows, cols, ops in S.components():
        choi = choi_from_superop(ops)
        herm = max(herm, float(np.max(np.abs(choi - np.conj(np.swapaxes(choi, -1, -2))), initial=0.0)))
        lam = min_eigenvalues(choi)
        covered += lam.size
        if lam.size:
            idx = np.unravel_index(int(np.argmin(lam)), lam.shape)
            if lam[idx] < worst:
                worst = float(lam[idx])
                worst_at = (int(rows[idx[0]]), int(cols[idx[1]]))
    if covered < S.m * S.m and worst > 0.0:
        # uncovered components are zero maps, whose Choi matrix has lambda_min = 0
        worst = 0.0
        worst_at = _first_uncovered(S)
    if not np.isfinite(worst):
        worst = 0.0
    ok = unitality <= tol and worst >= -tol and herm <= tol
    return UcpReport(float(unitality), float(worst), bool(ok), worst_at, herm)


def _first_uncovered(S: GridMap) -> tuple[int, int]:
    occ = np.zeros((S.m, S.m), dtype=bool)
    for rows, cols, _ in S.components():
        occ[np.ix_(rows, cols)] = True
    k, j = np.argwhere(~occ)[0]
    return int(k), int(j)


def defect_probe(
    S: GridMap,
    funcs: Sequence[np.ndarray] = (),
    probes: Sequence[np.ndarray] = (),
    extra: Iterable[MatrixFunction] = (),
) -> float:
    """Largest ``sup_norm(S(x) - x)`` over ``x`` in ``{b (x) f} U extra``.

    This is a lower estimate of the supremum of the identity defect over the
    unit ball; it only sees the elements it is handed.
    """
    worst = 0.0
    for b in probes:
        if np.linalg.norm(b, 2) > 1 + 1e-12:
            raise ValueError("probe matrices must have operator norm <= 1")
    for f in funcs:
        for b in probes:
            x = tensor_embed(b, f, S.grid)
            worst = max(worst, sup_norm(S.apply(x) - x))
    for x in extra:
        worst = max(worst, sup_norm(S.apply(x) - x))
    return worst


def _disjoint_blocks(S: GridMap) -> bool:
    rows = np.concatenate([b.rows for b in S.blocks]) if S.blocks else np.array([], int)
    cols = np.concatenate([b.cols for b in S.blocks]) if S.blocks else np.array([], int)
    return len(np.unique(rows)) == len(rows) and len(np.unique(cols)) == len(cols)


def numerical_rank(S: GridMap, cutoff: float = 1e-9) -> int:
    """Number of singular values of the assembled matrix above ``cutoff``.

    When the blocks use pairwise disjoint rows and columns the assembled matrix
    is a direct sum, and its singular values are those of the blocks.
    """
    if S.blocks and _disjoint_blocks(S):
        nn = S.n * S.n
        total = 0
        for b in S.blocks:
            dense = np.transpose(b.ops, (0, 2, 1, 3)).reshape(len(b.rows) * nn, len(b.cols) * nn)
            total += int(np.sum(np.linalg.svd(dense, compute_uv=False) > cutoff))
        return total
    s = np.linalg.svd(S.assemble(), compute_uv=False)
    return int(np.sum(s > cutoff))


def amplify(S: GridMap, element: np.ndarray, k: int = 2) -> np.ndarray:
    """Apply ``id_{M_k} (x) S`` to an element of ``M_k (x) M_n (x) C^m``.

    ``element`` has shape ``(m, k n, k n)`` with the ``M_k`` index outermost.
    """
    m, n = S.m, S.n
    e = np.asarray(element, dtype=complex).reshape(m, k, n, k, n)
    out = np.empty_like(e)
    for a in range(k):
        for c in range(k):
            part = MatrixFunction(S.grid, e[:, a, :, c, :])
            out[:, a, :, c, :] = S.apply(part).values
    return out.reshape(m, k * n, k * n)
