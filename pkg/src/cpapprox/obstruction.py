"""Why state-preserving block maps must kill the off-diagonal corner.

For the two-corner state built on a balanced pattern ``X`` and a block-form
UCP map ``S`` whose diagonal corner ranges are smooth at the pattern's balance
scale, :func:`verify_chain` evaluates every inequality of the argument

    |S_12(f)|^2 <= T_i(S_ii(f)) + eps                     (2x2 positivity + cover)
    avg_I T_1(S_11((1-1_X) f)) <= eps,  avg_I T_2(S_22(1_X f)) <= eps
    avg_I |S_12(f)|^2 <= (sqrt(2 eps) + sqrt(2 eps))^2 = 8 eps

on the grid and records each one.  :func:`expectation_family` and
:func:`defect_tradeoff_scan` provide a deterministic family of UCP maps that
trades state preservation against retention of the corner ``e_12 (x) f``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .blockmap import Block, GridMap
from .errors import CoverError, PatternScaleError, PreconditionError
from .reformulator import BlockFormMap
from .states import State, pattern_of

CHAIN_TOL = 1e-7
RANK_TOL = 1e-12


# ---------------------------------------------------------------------------
# span oscillation
# ---------------------------------------------------------------------------


def range_basis(functions) -> np.ndarray:
    """Orthonormal basis (for the normalized inner product) of the span of the columns.

    ``functions`` has shape ``(m, r)``.  The returned ``Q`` satisfies
    ``Q* Q / m = I`` so that ``||c|| <= ||Q c||_inf`` for every coefficient vector.
    Directions whose Gram eigenvalue falls below ``RANK_TOL`` times the largest
    are treated as numerically absent.
    """
    A = np.asarray(functions)
    if A.ndim == 1:
        A = A[:, None]
    if np.iscomplexobj(A) and not np.any(A.imag):
        A = np.ascontiguousarray(A.real)
    m = A.shape[0]
    if A.size == 0 or not np.any(A):
        return np.zeros((m, 0), dtype=A.dtype)
    w, v = np.linalg.eigh(A @ A.conj().T)
    keep = w > RANK_TOL * w[-1]
    return np.sqrt(m) * v[:, keep]


def span_oscillation(Q: np.ndarray, start: int, stop: int) -> float:
    """Upper bound for ``osc_[start, stop)(f) / ||f||_inf`` over ``f`` in the span of ``Q``.

    Uses ``|f(x) - f(y)| <= ||Q_x - Q_y|| ||c|| <= ||Q_x - Q_y|| ||f||_inf``; the bound is
    exact (zero) when every spanning function is constant on the interval.
    """
    rows = Q[start:stop]
    if rows.shape[0] < 2 or rows.shape[1] == 0:
        return 0.0
    sq = np.sum(np.abs(rows) ** 2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2 * np.real(rows @ rows.conj().T)
    return float(np.sqrt(max(d2.max(), 0.0)))


# ---------------------------------------------------------------------------
# covers and the averaging pair
# ---------------------------------------------------------------------------


@dataclass
class CoverSpec:
    m: int
    eps: float
    theta: int
    intervals: list  # (start, stop) pairs, collars included; intervals[0] contains theta
    cores: list  # (start, stop) pairs before collars
    sample_points: list  # t_i for i >= 1 (None for the first interval)
    J: tuple  # (start, stop): theta in J, J inside intervals[0] and disjoint from the rest
    rho: np.ndarray  # (N, m)
    osc_ratios: list  # span-oscillation bound per interval (must be < eps)

    @property
    def N(self) -> int:
        return len(self.intervals)


def _dyadic_split(Q: np.ndarray, m: int, eps: float) -> list[tuple[int, int]]:
    todo = [(0, m)]
    done = []
    while todo:
        s, e = todo.pop()
        if e - s == 1 or span_oscillation(Q, s, e) < eps:
            done.append((s, e))
        else:
            mid = (s + e) // 2
            todo.extend([(mid, e), (s, mid)])
    return sorted(done)


def build_cover(ranges, theta: int, eps: float, collars: bool = True, orthonormal: bool = False) -> CoverSpec:
    """Dyadic cover of the grid on whose intervals the span of ``ranges`` is flat.

    Intervals are split dyadically until every function ``f`` in the span
    oscillates by less than ``eps ||f||`` on each.  When the bound survives it,
    an interval of length at least 3 is widened by one grid point on each side
    (collars), except towards ``theta``'s interval.  Overlapping points split
    their weight evenly between the two hats.  Pass ``orthonormal=True`` when
    ``ranges`` is already the output of :func:`range_basis`.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    R = np.asarray(ranges)
    if R.ndim == 1:
        R = R[:, None]
    m = R.shape[0]
    if not 0 <= theta < m:
        raise IndexError("theta outside the grid")
    Q = R if orthonormal else range_basis(R)
    cores = _dyadic_split(Q, m, eps)
    home = next(i for i, (s, e) in enumerate(cores) if s <= theta < e)
    lengths = [e - s for s, e in cores]
    intervals = []
    for i, (s, e) in enumerate(cores):
        lo, hi = s, e
        if collars and lengths[i] >= 3:
            if i > 0 and i - 1 != home and lengths[i - 1] >= 3 and span_oscillation(Q, s - 1, e) < eps:
                lo = s - 1
            if i + 1 < len(cores) and i + 1 != home and lengths[i + 1] >= 3 and span_oscillation(Q, lo, e + 1) < eps:
                hi = e + 1
        intervals.append((lo, hi))
    ratios = [span_oscillation(Q, s, e) for s, e in intervals]
    if max(ratios) >= eps:
        raise CoverError(f"span oscillation {max(ratios):.3e} >= eps {eps:.3e}")  # pragma: no cover

    count = np.zeros(m)
    for s, e in intervals:
        count[s:e] += 1
    rho = np.zeros((len(intervals), m))
    for i, (s, e) in enumerate(intervals):
        rho[i, s:e] = 1.0 / count[s:e]

    order = [home] + [i for i in range(len(intervals)) if i != home]
    intervals = [intervals[i] for i in order]
    cores = [cores[i] for i in order]
    rho = rho[order]
    ratios = [ratios[i] for i in order]

    samples: list = [None]
    for s, e in intervals[1:]:
        exclusive = [x for x in range(s, e) if count[x] == 1]
        if not exclusive:
            raise CoverError(f"interval [{s}, {e}) has no point outside the others")
        samples.append(exclusive[0])
    s1, e1 = intervals[0]
    if count[theta] != 1:
        raise CoverError("theta lies on an overlap")  # pragma: no cover - collars avoid theta's interval
    js, je = theta, theta + 1
    while js > s1 and count[js - 1] == 1:
        js -= 1
    while je < e1 and count[je] == 1:
        je += 1
    return CoverSpec(m, eps, theta, intervals, cores, samples, (js, je), rho, ratios)


def build_averaging_pair(cover: CoverSpec, X) -> tuple[np.ndarray, np.ndarray]:
    """Matrices of the two UCP maps on grid functions.

    ``T(f) = sum_{i>=2} f(t_i) rho_i + (weighted mean of f over the chosen set under rho_1) rho_1``,
    with the set ``X`` for the first map and its complement for the second.
    """
    X = np.asarray(X, dtype=bool)
    m = cover.m
    base = np.zeros((m, m))
    for i in range(1, cover.N):
        base[:, cover.sample_points[i]] += cover.rho[i]
    rho1 = cover.rho[0]
    out = []
    for side in (X, ~X):
        w = rho1 * side
        total = w.sum()
        if total <= 0:
            raise PatternScaleError("first hat carries no weight on one side of the pattern")
        out.append(base + np.outer(rho1, w / total))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# certificate
# ---------------------------------------------------------------------------


@dataclass
class Certificate:
    eps: float
    theta: int
    interval: tuple
    osc_check: dict = field(default_factory=dict)
    fix_check: dict = field(default_factory=dict)
    determinant_check: dict = field(default_factory=dict)
    schur_check: dict = field(default_factory=dict)
    averaging_check: dict = field(default_factory=dict)
    cutoff_masses: dict = field(default_factory=dict)
    cutoff_check: dict = field(default_factory=dict)
    final_average: float = float("nan")
    final_bound: float = float("nan")
    theta_value: float = float("nan")
    lebesgue_slack: float = float("nan")
    passed: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _range_smoothness(S: BlockFormMap, basis, balance_level: int, eps: float) -> tuple[np.ndarray, float]:
    if basis is None:
        basis = range_basis(np.concatenate([S.corners[0, 0], S.corners[1, 1]], axis=1))
    width = S.m >> balance_level
    worst = max(span_oscillation(basis, s, s + width) for s in range(0, S.m, width))
    return basis, worst


def verify_chain(
    S: BlockFormMap,
    phi: State,
    f,
    theta: int,
    eps: float,
    balance_level: int,
    tol: float = CHAIN_TOL,
    basis: np.ndarray | None = None,
) -> Certificate:
    """Evaluate the full inequality chain for ``S`` at the point ``theta``.

    Raises :class:`PreconditionError` naming the failing hypothesis when ``S``
    is not UCP or state-preserving within ``tol``, when ``f`` leaves ``[0, 1]``,
    or when the diagonal corner ranges are not flat to ``eps`` on the
    intervals of level ``balance_level`` (``"RangeSmoothness"``).
    """
    if S.n != 2 or phi.n != 2:
        raise PreconditionError("n=2", "the chain lives on M_2")
    f = np.asarray(f)
    if np.iscomplexobj(f) and np.max(np.abs(f.imag)) > 0:
        raise PreconditionError("0<=f<=1", "f must be real")
    f = np.real(f).astype(float)
    if f.min() < 0 or f.max() > 1:
        raise PreconditionError("0<=f<=1", f"f ranges over [{f.min():.3g}, {f.max():.3g}]")
    rep = S.verify_ucp(tol)
    if not rep.is_ucp:
        raise PreconditionError(
            "UCP", f"unitality {rep.unitality_defect:.3e}, Choi min {rep.min_choi_eigenvalue:.3e}", rep.min_choi_eigenvalue
        )
    defect = S.state_defect(phi)
    if defect > tol:
        raise PreconditionError("phi-preservation", f"|phi o S - phi| = {defect:.3e}", defect)
    basis, smooth = _range_smoothness(S, basis, balance_level, eps)
    if smooth >= eps:
        raise PreconditionError(
            "RangeSmoothness", f"range oscillation ratio {smooth:.3e} >= eps at level {balance_level}", smooth
        )

    m = S.m
    X = pattern_of(phi)
    cert = Certificate(eps=eps, theta=theta, interval=(0, 0), final_bound=8.0 * eps)
    cover = build_cover(basis, theta, eps, orthonormal=True)
    cert.osc_check = {"max_ratio": max(cover.osc_ratios), "bound": eps, "ok": max(cover.osc_ratios) < eps}
    T1, T2 = build_averaging_pair(cover, X)

    S11, S12, S22 = S.corners[0, 0], S.corners[0, 1], S.corners[1, 1]

    def real(v):
        return np.real(v)

    fnorm = float(np.max(np.abs(f)))
    u1, u2 = real(S11 @ f), real(S22 @ f)
    e1 = float(np.max(np.abs(T1 @ u1 - u1)))
    e2 = float(np.max(np.abs(T2 @ u2 - u2)))
    cert.fix_check = {"defect_1": e1, "defect_2": e2, "bound": eps * fnorm, "ok": max(e1, e2) <= eps * fnorm + tol}

    c = S12 @ f
    c2 = np.abs(c) ** 2
    det = u1 * real(S22 @ np.ones(m)) - c2
    cert.determinant_check = {"min_det": float(det.min()), "ok": float(det.min()) >= -tol}
    s1 = float(np.max(c2 - (T1 @ u1) - eps))
    s2 = float(np.max(c2 - (T2 @ u2) - eps))
    cert.schur_check = {"excess_1": s1, "excess_2": s2, "ok": max(s1, s2) <= tol}

    width = m >> balance_level
    cell_start = (theta // width) * width
    js, je = cover.J
    I0, I1 = max(js, cell_start), min(je, cell_start + width)
    cert.interval = (int(I0), int(I1))

    def avg_I(v):
        return float(np.mean(np.real(v[I0:I1])))

    rho1 = cover.rho[0]
    massX = float(np.sum(rho1 * X))
    massXc = float(np.sum(rho1 * ~X))
    lhs = avg_I(T1 @ u1)
    mid = avg_I((np.sum(u1 * X) / massX) * rho1)
    rhs = avg_I((np.sum(f * X) / massX) * rho1)
    cert.averaging_check = {
        "lhs": lhs,
        "mid": mid,
        "rhs": rhs,
        "ok": lhs <= mid + tol and abs(mid - rhs) <= tol * max(1.0, abs(rhs)),
    }

    # the cut-off is the exact indicator of X: K = O = X and the budget is unused
    gamma = X.astype(float)
    cert.cutoff_masses = {
        "outer_minus_inner": 0.0,
        "budget": eps * min(massX, massXc) / m,
        "ok": True,
    }
    f_in, f_out = gamma * f, (1 - gamma) * f
    v_out, v_in = real(S11 @ f_out), real(S22 @ f_in)
    a_out = avg_I(T1 @ v_out)
    a_in = avg_I(T2 @ v_in)
    sq_in = np.abs(S12 @ f_in) ** 2
    sq_out = np.abs(S12 @ f_out) ** 2
    pw_in = float(np.max(sq_in - (T2 @ v_in) - eps))
    pw_out = float(np.max(sq_out - (T1 @ v_out) - eps))
    A_in, A_out = avg_I(sq_in), avg_I(sq_out)
    final = avg_I(c2)
    minkowski = (np.sqrt(A_in) + np.sqrt(A_out)) ** 2
    cert.cutoff_check = {
        "avg_T1_S11_outside": a_out,
        "avg_T2_S22_inside": a_in,
        "pointwise_excess_inside": pw_in,
        "pointwise_excess_outside": pw_out,
        "avg_sq_inside": A_in,
        "avg_sq_outside": A_out,
        "minkowski": float(minkowski),
        "ok": (
            a_out <= eps + tol
            and a_in <= eps + tol
            and max(pw_in, pw_out) <= tol
            and A_in <= 2 * eps + tol
            and A_out <= 2 * eps + tol
            and final <= minkowski + tol
        ),
    }
    cert.final_average = final
    cert.theta_value = float(c2[theta])
    seg = c2[I0:I1]
    cert.lebesgue_slack = float(seg.max() - seg.min())
    cert.passed = bool(
        cert.osc_check["ok"]
        and cert.fix_check["ok"]
        and cert.determinant_check["ok"]
        and cert.schur_check["ok"]
        and cert.averaging_check["ok"]
        and cert.cutoff_check["ok"]
        and final <= cert.final_bound + tol
    )
    return cert


# ---------------------------------------------------------------------------
# experiment family and scan
# ---------------------------------------------------------------------------


def expectation_family(phi: State, balance_level: int, lam: float) -> GridMap:
    """``S_lam = (1 - lam) D + lam M`` on the cells of the given dyadic level.

    ``D`` averages the 11-corner over the pattern and the 22-corner over its
    complement within each cell and drops the off-diagonal corners; it is UCP
    and state-preserving.  ``M`` averages every corner plainly over the cell;
    it is UCP but moves the state.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    X = pattern_of(phi)
    grid = phi.grid
    blocks = []
    for cell in grid.dyadic_cells(balance_level):
        idx = np.arange(cell.start, cell.stop)
        inside = X[idx]
        nx, nc, size = int(inside.sum()), int((~inside).sum()), len(idx)
        if nx == 0 or nc == 0:
            raise PatternScaleError(f"cell [{cell.start}, {cell.stop}) misses one side of the pattern")
        d = np.zeros((size, 4))
        d[:, 0] = (1 - lam) * inside / nx + lam / size
        d[:, 1] = lam / size
        d[:, 2] = lam / size
        d[:, 3] = (1 - lam) * (~inside) / nc + lam / size
        ops = np.zeros((size, 4, 4), dtype=complex)
        ops[:, np.arange(4), np.arange(4)] = d
        blocks.append(Block(idx, idx, np.broadcast_to(ops[None], (size, size, 4, 4))))
    return GridMap(grid, 2, tuple(blocks), structure=f"cells@{balance_level}", rank_bound=4 * len(blocks))


SCAN_COLUMNS = (
    "lambda",
    "eps",
    "preservation_defect",
    "retention",
    "identity_defect",
    "certified_bound",
    "final_average",
    "pass",
)


def defect_tradeoff_scan(
    phi: State,
    balance_level: int,
    lambdas: Sequence[float],
    f,
    eps: float = 0.1,
    theta: int = 0,
) -> list[dict]:
    """One row per ``lam``: how much of ``e_12 (x) f`` survives and what it costs in state drift."""
    f = np.asarray(f, dtype=float)
    rows = []
    for lam in lambdas:
        S = BlockFormMap.from_gridmap(expectation_family(phi, balance_level, lam))
        c = S.corners[0, 1] @ f
        row = {
            "lambda": float(lam),
            "eps": float(eps),
            "preservation_defect": S.state_defect(phi),
            "retention": float(np.max(np.abs(c))),
            "identity_defect": float(np.max(np.abs(c - f))),
            "certified_bound": 8.0 * eps,
            "final_average": float("nan"),
            "pass": False,
        }
        try:
            cert = verify_chain(S, phi, f, theta, eps, balance_level)
        except PreconditionError as exc:
            row["status"] = exc.hypothesis
        else:
            row["final_average"] = cert.final_average
            row["pass"] = cert.passed
            row["status"] = "certified" if cert.passed else "failed"
        rows.append(row)
    return rows
