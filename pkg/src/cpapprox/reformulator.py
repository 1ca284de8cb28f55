"""Block-form normalization of UCP state-preserving maps for diagonal states.

A map is in block form when it sends each corner ``e_ij (x) C^m`` into itself;
it is then described by ``n^2`` corner maps ``R_ij`` on grid functions, stored
as ``m x m`` matrices.  The pipeline is

    S  --compress_blocks-->  S~ = sum_ij e_ii S(e_ii x e_jj) e_jj
       --add_corrections-->  R  = S~ + sum_k T_k          (restores the state)
       --renormalize------>  R~ = V R V + sum_k D_k       (restores the unit)

with ``T_k(x) = phi(e_kk x e_kk - e_kk S(e_kk x e_kk) e_kk) / phi(e_kk) * e_kk`` and
``D_k(x) = phi(e_kk x e_kk) / phi(e_kk) * (e_kk - R(e_kk) / ||R(e_kk)||)``.

The correction ``D_k`` omits the term ``R(e_kk x e_kk) / ||R(e_kk)||``: that term
is already the kk-corner of ``V R(x) V``, and adding it a second time breaks
unitality.  ``literal=True`` keeps it so the resulting defect can be measured.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blockmap import Block, GridMap, UcpReport, superop_functional
from .errors import DegenerateCorner, DimensionError, PreconditionError
from .gridalg import Grid, MatrixFunction, matrix_unit, sup_norm, unit
from .states import State, is_diagonal

INPUT_TOL = 1e-7
BLOCK_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class BlockFormMap:
    grid: Grid
    corners: np.ndarray  # (n, n, m, m): corners[i, j] is the matrix of R_ij

    @property
    def n(self) -> int:
        return self.corners.shape[0]

    @property
    def m(self) -> int:
        return self.grid.m

    def corner(self, i: int, j: int) -> np.ndarray:
        return self.corners[i, j]

    def apply(self, h: MatrixFunction) -> MatrixFunction:
        if h.n != self.n or h.m != self.m:
            raise DimensionError("shape mismatch")
        out = np.einsum("ijkl,lij->kij", self.corners, h.values)
        return MatrixFunction(h.grid, out)

    __call__ = apply

    @classmethod
    def from_gridmap(cls, S: GridMap, tol: float = BLOCK_TOL) -> BlockFormMap:
        """Read off corner maps; raises if some component mixes corners."""
        n, m, nn = S.n, S.m, S.n * S.n
        corners = np.zeros((nn, m, m), dtype=complex)
        eye = np.eye(nn, dtype=bool)
        for b in S.blocks:
            leak = np.max(np.abs(np.where(eye, 0.0, b.ops)), initial=0.0)
            if leak > tol:
                raise PreconditionError("block-form", f"component leaks across corners by {leak:.3e}", leak)
            d = np.diagonal(b.ops, axis1=2, axis2=3)  # (rows, cols, nn)
            for p in range(nn):
                corners[p][np.ix_(b.rows, b.cols)] += d[:, :, p]
        return cls(S.grid, corners.reshape(n, n, m, m))

    def to_gridmap(self) -> GridMap:
        n, m, nn = self.n, self.m, self.n * self.n
        flat = self.corners.reshape(nn, m, m)
        ops = np.zeros((m, m, nn, nn), dtype=complex)
        idx = np.arange(nn)
        ops[:, :, idx, idx] = np.transpose(flat, (1, 2, 0))
        return GridMap.from_dense(self.grid, ops, structure="block-form")

    def hermitian_symmetry_defect(self) -> float:
        """``max |R_ji - conj(R_ij)|``; zero exactly when ``R_ji(f) = conj(R_ij(conj f))``."""
        return float(np.max(np.abs(self.corners - np.conj(np.transpose(self.corners, (1, 0, 2, 3))))))

    def verify_ucp(self, tol: float = 1e-9) -> UcpReport:
        """Unitality and complete positivity, computed corner-wise.

        The Choi matrix of component ``(k, j)`` has the same nonzero spectrum as
        the ``n x n`` matrix ``[R_ac[k, j]]_{a,c}``, padded with zeros.
        """
        one = unit(self.grid, self.n)
        unitality = sup_norm(self.apply(one) - one)
        pointwise = np.transpose(self.corners, (2, 3, 0, 1))  # (m, m, n, n)
        herm = float(np.max(np.abs(pointwise - np.conj(np.swapaxes(pointwise, -1, -2)))))
        lam = np.linalg.eigvalsh(0.5 * (pointwise + np.conj(np.swapaxes(pointwise, -1, -2))))[..., 0]
        k, j = np.unravel_index(int(np.argmin(lam)), lam.shape)
        worst = min(float(lam[k, j]), 0.0) if self.n > 1 else float(lam[k, j])
        ok = unitality <= tol and worst >= -tol and herm <= tol
        return UcpReport(float(unitality), worst, bool(ok), (int(k), int(j)), herm)

    def state_defect(self, phi: State) -> float:
        """Norm of the functional ``phi o R - phi``."""
        w = phi.functional()
        wt = np.swapaxes(w, 1, 2)  # wt[k, i, j] = w_k[j, i]
        pulled = np.einsum("kij,ijkl->lij", wt, self.corners)
        return float(np.sum(np.linalg.svd(np.swapaxes(pulled, 1, 2) - w, compute_uv=False)))


def state_defect(S: GridMap, phi: State) -> float:
    """Norm of the functional ``phi o S - phi`` (sum of trace norms of its densities)."""
    w = phi.functional()
    return float(np.sum(np.linalg.svd(S.pullback(w) - w, compute_uv=False)))


def compress_blocks(S: GridMap) -> GridMap:
    """``x -> sum_ij e_ii S(e_ii x e_jj) e_jj``: keep the corner-to-same-corner entries."""
    nn = S.n * S.n
    eye = np.eye(nn)
    blocks = tuple(Block(b.rows, b.cols, b.ops * eye) for b in S.blocks)
    return GridMap(S.grid, S.n, blocks, structure="block-form", rank_bound=None)


def _check_state(phi: State):
    if not is_diagonal(phi, tol=BLOCK_TOL):
        raise PreconditionError("diagonal", "state does not vanish on off-diagonal corners")
    for k in range(phi.n):
        if phi.corner_mass(k) <= 0:
            raise PreconditionError("faithful-corners", f"phi(e_{k}{k}) = 0", 0.0)


def correction_densities(S: GridMap, phi: State) -> np.ndarray:
    """Densities of ``x -> phi(e_kk x e_kk) - phi(e_kk S(e_kk x e_kk) e_kk)`` for each k.

    Returns shape ``(n, m)``: only the ``(k, k)`` entry of each density is nonzero.
    """
    w = phi.functional()
    n = phi.n
    out = np.zeros((n, phi.m), dtype=complex)
    for k in range(n):
        wk = np.zeros_like(w)
        wk[:, k, k] = w[:, k, k]
        pulled = S.pullback(wk)
        out[k] = w[:, k, k] - pulled[:, k, k]
    return out


def add_corrections(S_tilde: GridMap, S: GridMap, phi: State, tol: float = INPUT_TOL) -> GridMap:
    _check_state(phi)
    n, m = phi.n, phi.m
    dens = correction_densities(S, phi)
    worst = float(np.min(np.real(dens)))
    if worst < -tol:
        raise PreconditionError("phi-preservation", "a correction functional is not positive", worst)
    dens = np.where(np.real(dens) < 0, 0.0, np.real(dens))
    nn = n * n
    idx = np.arange(m)
    blocks = list(S_tilde.blocks)
    for k in range(n):
        mass = phi.corner_mass(k)
        ops = np.zeros((m, nn, nn), dtype=complex)
        for j in range(m):
            wj = np.zeros((n, n), dtype=complex)
            wj[k, k] = dens[k, j] / mass
            ops[j] = superop_functional(wj, matrix_unit(n, k, k))
        blocks.append(Block(idx, idx, np.broadcast_to(ops[None], (m, m, nn, nn))))
    return GridMap(S.grid, n, tuple(blocks), structure="block-form", rank_bound=None)


def renormalize(R: GridMap | BlockFormMap, phi: State, literal: bool = False) -> BlockFormMap:
    _check_state(phi)
    B = R if isinstance(R, BlockFormMap) else BlockFormMap.from_gridmap(R)
    n, m = B.n, B.m
    corners = B.corners.copy()
    ones = np.ones(m)
    norms = np.empty(n)
    images = []
    for k in range(n):
        rk = B.corners[k, k] @ ones
        norms[k] = float(np.max(np.abs(rk)))
        if norms[k] <= 1e-300:
            raise DegenerateCorner(k)
        images.append(rk)
    v = norms**-0.5
    corners *= (v[:, None] * v[None, :])[:, :, None, None]
    w = phi.functional()
    for k in range(n):
        c = np.real(w[:, k, k]) / phi.corner_mass(k)
        corners[k, k] += np.outer(ones - images[k] / norms[k], c)
        if literal:
            corners[k, k] += B.corners[k, k] / norms[k]
    return BlockFormMap(B.grid, corners)


def reformulate(S: GridMap, phi: State, literal: bool = False, tol: float = INPUT_TOL) -> BlockFormMap:
    """Block-form UCP state-preserving map built from a UCP state-preserving ``S``."""
    from .blockmap import verify_ucp

    _check_state(phi)
    rep = verify_ucp(S, tol)
    if not rep.is_ucp:
        raise PreconditionError(
            "UCP", f"unitality {rep.unitality_defect:.3e}, Choi min {rep.min_choi_eigenvalue:.3e}", rep.min_choi_eigenvalue
        )
    defect = state_defect(S, phi)
    if defect > tol:
        raise PreconditionError("phi-preservation", f"|phi o S - phi| = {defect:.3e}", defect)
    S_tilde = compress_blocks(S)
    R = add_corrections(S_tilde, S, phi, tol)
    return renormalize(R, phi, literal=literal)


def corner_pieces(h: MatrixFunction) -> list[MatrixFunction]:
    """The elements ``e_ii h e_jj``."""
    out = []
    for i in range(h.n):
        for j in range(h.n):
            v = np.zeros_like(h.values)
            v[:, i, j] = h.values[:, i, j]
            out.append(MatrixFunction(h.grid, v))
    return out


def amplification(S: GridMap, Rt: BlockFormMap, probes) -> float:
    """Largest ratio of the identity defect of ``Rt`` to that of ``S`` on corner pieces.

    Returns ``inf`` if ``S`` fixes every corner piece of some probe that ``Rt`` moves.
    """
    worst = 0.0
    for h in probes:
        num = sup_norm(Rt.apply(h) - h)
        den = max(sup_norm(S.apply(p) - p) for p in corner_pieces(h))
        if num <= 1e-12:
            continue
        worst = max(worst, num / den if den > 0 else np.inf)
    return worst
