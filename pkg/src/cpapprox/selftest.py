"""Reduced-size property suite behind ``cpapprox selftest``.

Each check returns ``(passed, witness)`` where the witness is the number (or a
small dict of numbers) that decided the outcome.  Spectral routines are looked
up through their modules at call time so a patched kernel is actually exercised.
"""
from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import approximator, blockmap, gridalg, matcore, obstruction, presets, reformulator, states
from .errors import CpApproxError, NotGridFaithful, PreconditionError

TOL = 1e-9


def _rng(seed: int, salt: int) -> np.random.Generator:
    return np.random.default_rng([seed, salt])


def _random_psd(rng, n, lo=0.0, hi=2.0):
    return presets.random_density(n, rng, lo, hi)


# ---------------------------------------------------------------------------
# matcore
# ---------------------------------------------------------------------------


def check_psd_sqrt(seed: int):
    rng = _rng(seed, 1)
    worst_sq, worst_neg = 0.0, 0.0
    for _ in range(50):
        n = int(rng.integers(1, 5))
        a = _random_psd(rng, n)
        r = matcore.psd_sqrt(a)
        worst_sq = max(worst_sq, float(np.linalg.norm(r @ r - a, 2)) / max(1.0, matcore.op_norm(a)))
        worst_neg = min(worst_neg, float(np.linalg.eigvalsh(0.5 * (r + r.conj().T))[0]))
    return worst_sq <= TOL and worst_neg >= -1e-10, {"square_residual": worst_sq, "min_eigenvalue": worst_neg}


def check_inverse_root_modulus(seed: int, pairs: int = 200):
    """``||a^-1/2 - b^-1/2|| <= ||a - b||^1/2 / s`` for spectra in ``[s, M]``."""
    rng = _rng(seed, 2)
    worst = -np.inf
    for _ in range(pairs):
        n = int(rng.integers(1, 5))
        s = float(rng.uniform(0.05, 1.0))
        M = s + float(rng.uniform(0.0, 2.0))
        a, b = _random_psd(rng, n, s, M), _random_psd(rng, n, s, M)
        lhs = matcore.op_norm(matcore.psd_inv_sqrt(a, s * (1 - 1e-12)) - matcore.psd_inv_sqrt(b, s * (1 - 1e-12)))
        rhs = np.sqrt(matcore.op_norm(a - b)) / s
        worst = max(worst, lhs - rhs)
    return worst <= 1e-12, {"max_excess": worst}


def check_modulus_implication(seed: int, pairs: int = 1000):
    """``||a - b|| <= (eps s / (8 M))^2`` implies ``||a^-1/2 - b^-1/2|| <= eps / (8 M)``.

    Half of the pairs are drawn close enough to meet the hypothesis.
    """
    rng = _rng(seed, 8)
    violations = premise = 0
    worst = 0.0
    for i in range(pairs):
        n = int(rng.integers(1, 5))
        s = float(rng.uniform(0.05, 1.0))
        M = s + float(rng.uniform(0.0, 2.0))
        eps = float(rng.uniform(0.01, 1.0))
        radius = approximator.modulus_inverse_root(s, eps, M)
        if i % 2:
            b = _random_psd(rng, n, s, M)
            a = _random_psd(rng, n, s, M)
        else:
            # a has spectrum inside [s + radius, M - radius] so b = a + e stays in [s, M]
            lo, hi = s + radius, max(s + radius, M - radius)
            a = _random_psd(rng, n, lo, hi)
            e = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
            e = e + e.conj().T
            b = a + float(rng.uniform(0, 1.2)) * radius * e / np.linalg.norm(e, 2)
        if matcore.op_norm(a - b) > radius:
            continue
        premise += 1
        floor = s * (1 - 1e-9)
        d = matcore.op_norm(matcore.psd_inv_sqrt(a, floor) - matcore.psd_inv_sqrt(b, floor))
        worst = max(worst, d * 8 * M / eps)
        if d > eps / (8 * M) * (1 + 1e-9):
            violations += 1
    return violations == 0 and premise > 0, {"violations": violations, "premise_held": premise, "worst_ratio": worst}


# ---------------------------------------------------------------------------
# gridalg / blockmap
# ---------------------------------------------------------------------------


def check_embed_roundtrip(seed: int):
    rng = _rng(seed, 3)
    grid = gridalg.Grid(9)
    b = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    f = rng.standard_normal(9)
    h = gridalg.tensor_embed(b, f, grid)
    err = max(float(np.max(np.abs(gridalg.corner_extract(h, i, j) - b[i, j] * f))) for i in range(3) for j in range(3))
    return err == 0.0, {"max_error": err}


def choi_probe(m: int, n: int, j: int) -> np.ndarray:
    """``sum_ac e_ac (x) e_ac`` at grid point ``j`` as an element of ``M_n (x) M_n (x) C^m``."""
    v = np.eye(n).reshape(-1)
    out = np.zeros((m, n * n, n * n), dtype=complex)
    out[j] = np.outer(v, v)
    return out


def amplified_min_eigenvalue(S: blockmap.GridMap, probes) -> float:
    worst = np.inf
    for p in probes:
        img = blockmap.amplify(S, p, k=S.n)
        worst = min(worst, float(matcore.min_eigenvalues(img).min()))
    return worst


def cp_oracle_agreement(seed: int, count: int, n: int = 2, m: int = 3, probes: int = 200, salt: int = 4):
    """Compare the Choi verdict with amplified positivity on ``probes`` positive elements."""
    rng = _rng(seed, salt)
    forward_fail = reverse_miss = 0
    worst_forward = 0.0
    for i in range(count):
        S = presets.random_map(rng, n, m, cp=bool(i % 2))
        choi_ok = blockmap.verify_ucp(S).min_choi_eigenvalue >= -TOL
        elems = [choi_probe(m, n, j) for j in range(m)]
        while len(elems) < probes:
            elems.append(presets.random_positive_element(rng, m, n * n, rank_one=bool(len(elems) % 2)))
        amp = amplified_min_eigenvalue(S, elems)
        scale = max(1.0, max(float(np.max(np.abs(e))) for e in elems))
        if choi_ok and amp < -1e-9 * scale * 10:
            forward_fail += 1
            worst_forward = min(worst_forward, amp)
        if not choi_ok and amp >= 0:
            reverse_miss += 1
    return forward_fail == 0 and reverse_miss == 0, {
        "forward_failures": forward_fail,
        "reverse_misses": reverse_miss,
        "worst_forward": worst_forward,
    }


def check_identity_ucp(seed: int):
    rep = blockmap.verify_ucp(blockmap.GridMap.identity(gridalg.Grid(5), 3))
    return rep.is_ucp and rep.unitality_defect == 0.0, rep._asdict()


# ---------------------------------------------------------------------------
# states
# ---------------------------------------------------------------------------


def check_rudin_state(seed: int, level: int = 10, balance_level: int = 5, samples: int = 50):
    """Margin zero, ``phi(e_11 (x) 1) = 1/2`` and positivity on cell-constant elements.

    A positive element constant on level-``balance_level`` cells is a sum of
    ``a_c (x) 1_c`` with ``a_c >= 0``, so testing single cells is exhaustive.
    """
    rng = _rng(seed, 5)
    pat = states.balanced_pattern(level, balance_level)
    phi = states.rudin_state(pat)
    margin = states.faithfulness_margin(phi)
    e11 = states.eval_state(phi, gridalg.tensor_embed(gridalg.matrix_unit(2, 0, 0), np.ones(phi.m), phi.grid))
    worst = np.inf
    for cell in phi.grid.dyadic_cells(balance_level):
        ind = np.zeros(phi.m)
        ind[cell.start : cell.stop] = 1.0
        for t in range(samples):
            if t % 2:
                v = rng.standard_normal(2) + 1j * rng.standard_normal(2)
                a = np.outer(v, v.conj())
            else:
                a = _random_psd(rng, 2, 0.0, 2.0)
            val = states.eval_state(phi, gridalg.tensor_embed(a, ind, phi.grid)).real
            worst = min(worst, val / max(np.trace(a).real, 1e-300))
    ok = margin == 0.0 and e11 == 0.5 and worst > 0 and not states.pattern_balance_violations(pat)
    return ok, {"margin": margin, "e11_value": e11, "min_restricted_value": worst}


# ---------------------------------------------------------------------------
# approximator
# ---------------------------------------------------------------------------


def check_approximator(seed: int, m: int = 32, eps_ladder=(0.4, 0.2)):
    rng = _rng(seed, 6)
    witness = []
    ok = True
    for n in (2, 3):
        phi = presets.random_state(rng, n, m)
        F = presets.function_family("default", phi.grid)
        for eps in eps_ladder:
            T, d = approximator.build_T(phi, F, eps, seed=seed)
            rep = blockmap.verify_ucp(T, TOL)
            pres = reformulator.state_defect(T, phi)
            rank = blockmap.numerical_rank(T)
            good = (
                rep.is_ucp
                and pres <= TOL
                and d.probe_defect <= eps
                and d.matrix_probe_defect <= approximator.sandwich_defect_bound(eps)
                and rank <= d.rank_bound
            )
            ok &= good
            witness.append(
                {"n": n, "eps": eps, "ucp": rep.unitality_defect, "choi_min": rep.min_choi_eigenvalue,
                 "preservation": pres, "probe": d.probe_defect, "matrix_probe": d.matrix_probe_defect,
                 "rank": rank, "rank_bound": d.rank_bound}
            )
    return bool(ok), witness


def check_not_faithful_rejected(seed: int):
    phi = states.rudin_state(states.balanced_pattern(5, 2))
    try:
        approximator.build_T(phi, [np.ones(phi.m)], 0.2, seed=seed)
    except NotGridFaithful as exc:
        return True, {"error": type(exc).__name__}
    return False, {"error": None}


# ---------------------------------------------------------------------------
# reformulator
# ---------------------------------------------------------------------------


def reformulator_case(rng, n: int, m: int):
    phi = presets.random_diagonal_state(rng, n, m)
    S = presets.admissible_map(rng, phi)
    Rt = reformulator.reformulate(S, phi)
    leak = 0.0
    G = Rt.to_gridmap()
    for _, _, ops in G.components():
        off = ops * (1 - np.eye(n * n))
        leak = max(leak, float(np.max(np.abs(off), initial=0.0)))
    rep = Rt.verify_ucp(TOL)
    return {
        "leakage": leak,
        "unitality": rep.unitality_defect,
        "choi_min": rep.min_choi_eigenvalue,
        "preservation": Rt.state_defect(phi),
    }


def check_reformulator(seed: int, count: int = 50, m: int = 12):
    rng = _rng(seed, 7)
    rows = [reformulator_case(rng, int(rng.integers(2, 4)), m) for _ in range(count)]
    phi = presets.random_diagonal_state(rng, 2, m)
    Rt = reformulator.reformulate(blockmap.GridMap.identity(phi.grid, 2), phi)
    ident = np.zeros_like(Rt.corners)
    for i in range(2):
        for j in range(2):
            ident[i, j] = np.eye(m)
    id_err = float(np.max(np.abs(Rt.corners - ident)))
    ok = id_err == 0.0 and all(
        r["leakage"] <= 1e-12 and r["unitality"] <= TOL and r["choi_min"] >= -TOL and r["preservation"] <= TOL for r in rows
    )
    worst = {k: max(abs(r[k]) for r in rows) for k in rows[0]}
    return ok, {"worst": worst, "identity_error": id_err}


# ---------------------------------------------------------------------------
# obstruction
# ---------------------------------------------------------------------------


def check_obstruction(seed: int, level: int = 6, balance_level: int = 3, eps: float = 0.2):
    phi = states.rudin_state(states.balanced_pattern(level, balance_level))
    f = presets.unit_function("ramp", phi.grid)
    rows = obstruction.defect_tradeoff_scan(phi, balance_level, [0.0, 0.5, 1.0], f, eps=eps)
    try:
        obstruction.verify_chain(
            reformulator.BlockFormMap.from_gridmap(blockmap.GridMap.identity(phi.grid, 2)), phi, f, 0, eps, balance_level
        )
        rejected = None
    except PreconditionError as exc:
        rejected = exc.hypothesis
    r0 = rows[0]
    ok = (
        r0["pass"]
        and r0["retention"] == 0.0
        and abs(r0["identity_defect"] - float(np.max(np.abs(f)))) <= 1e-12
        and all(r["retention"] > 0 and r["preservation_defect"] > 0 and not r["pass"] for r in rows[1:])
        and rejected == "RangeSmoothness"
    )
    return bool(ok), {"rows": rows, "identity_rejected_by": rejected}


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------

CHECKS: dict[str, Callable] = {
    "matcore.psd_sqrt": check_psd_sqrt,
    "matcore.inverse_root_modulus": check_inverse_root_modulus,
    "approximator.modulus_implication": check_modulus_implication,
    "gridalg.embed_roundtrip": check_embed_roundtrip,
    "blockmap.identity_ucp": check_identity_ucp,
    "blockmap.cp_oracle": lambda seed: cp_oracle_agreement(seed, 100, probes=200),
    "states.rudin": check_rudin_state,
    "approximator.guarantee": check_approximator,
    "approximator.rejects_margin_zero": check_not_faithful_rejected,
    "reformulator.normal_form": check_reformulator,
    "obstruction.certificate": check_obstruction,
}


def run_selftest(seed: int = 0) -> tuple[list[dict], dict]:
    """Run every check; returns the check rows and per-check timings."""
    results, timings = [], {}
    for name, fn in CHECKS.items():
        t0 = time.perf_counter()
        try:
            passed, witness = fn(seed)
        except CpApproxError as exc:
            passed, witness = False, {"error": type(exc).__name__, "detail": str(exc)}
        timings[name] = time.perf_counter() - t0
        results.append({"name": name, "passed": bool(passed), "witness": witness})
    return results, timings
