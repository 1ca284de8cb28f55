import numpy as np
import pytest

from cpapprox.approximator import build_T
from cpapprox.blockmap import GridMap, numerical_rank, superop_congruence, superop_functional, verify_ucp
from cpapprox.errors import PreconditionError
from cpapprox.gridalg import Grid, MatrixFunction, corner_extract, matrix_unit, multiply, sup_norm, tensor_embed, unit
from cpapprox.presets import (
    admissible_map,
    function_family,
    pinching_map,
    random_cp_map,
    random_diagonal_state,
    random_positive_element,
    random_state,
    state_map,
)
from cpapprox.reformulator import (
    BlockFormMap,
    add_corrections,
    amplification,
    compress_blocks,
    correction_densities,
    reformulate,
    renormalize,
    state_defect,
)
from cpapprox.states import eval_state, make_state


def _rand_mf(rng, m, n):
    return MatrixFunction(Grid(m), rng.standard_normal((m, n, n)) + 1j * rng.standard_normal((m, n, n)))


def _is_identity(B: BlockFormMap) -> bool:
    eye = np.eye(B.m)
    return all(np.array_equal(B.corners[i, j], eye) for i in range(B.n) for j in range(B.n))


def _leakage(B: BlockFormMap, rng) -> float:
    worst = 0.0
    for i in range(B.n):
        for j in range(B.n):
            out = B.apply(tensor_embed(matrix_unit(B.n, i, j), rng.standard_normal(B.m), B.grid))
            for a in range(B.n):
                for b in range(B.n):
                    if (a, b) != (i, j):
                        worst = max(worst, float(np.max(np.abs(corner_extract(out, a, b)))))
    return worst


# -- compress_blocks -----------------------------------------------------------


def test_compress_identity_is_identity(rng):
    g = Grid(5)
    C = compress_blocks(GridMap.identity(g, 3))
    h = _rand_mf(rng, 5, 3)
    assert C.apply(h).allclose(h, atol=0)


def test_compress_state_map(rng):
    phi = random_diagonal_state(rng, 3, 8)
    C = compress_blocks(state_map(phi))
    h = _rand_mf(rng, 8, 3)
    expect = np.zeros_like(h.values)
    for i in range(3):
        corner = np.zeros_like(h.values)
        corner[:, i, i] = h.values[:, i, i]
        expect[:, i, i] = eval_state(phi, MatrixFunction(phi.grid, corner))
    np.testing.assert_allclose(C.apply(h).values, expect, atol=1e-14)


def test_compress_preserves_corners(rng):
    for _ in range(50):
        S = random_cp_map(rng, 2, 3)
        B = BlockFormMap.from_gridmap(compress_blocks(S))
        assert _leakage(B, rng) == 0
        # the kept corner map is the corner of S applied to the same corner
        f = rng.standard_normal(3)
        x = tensor_embed(matrix_unit(2, 0, 1), f)
        np.testing.assert_allclose(corner_extract(B.apply(x), 0, 1), corner_extract(S.apply(x), 0, 1), atol=1e-13)


# -- add_corrections -----------------------------------------------------------


def test_corrections_vanish_for_identity(rng):
    phi = random_diagonal_state(rng, 2, 6)
    S = GridMap.identity(phi.grid, 2)
    np.testing.assert_array_equal(correction_densities(S, phi), 0)
    R = add_corrections(compress_blocks(S), S, phi)
    h = _rand_mf(rng, 6, 2)
    assert R.apply(h).allclose(h, atol=0)


def test_corrections_restore_state(rng):
    phi = random_diagonal_state(rng, 2, 6)
    S = state_map(phi)
    R = add_corrections(compress_blocks(S), S, phi)
    for _ in range(100):
        h = _rand_mf(rng, 6, 2)
        assert abs(eval_state(phi, R.apply(h)) - eval_state(phi, h)) <= 1e-9 * sup_norm(h)


def test_correction_functional_is_positive(rng):
    phi = random_diagonal_state(rng, 3, 5)
    S = admissible_map(rng, phi)
    for _ in range(100):
        y = MatrixFunction(phi.grid, random_positive_element(rng, 5, 3, rank_one=bool(rng.integers(2))))
        for k in range(3):
            p = tensor_embed(matrix_unit(3, k, k), np.ones(5), phi.grid)
            corner = multiply(multiply(p, y), p)
            value = eval_state(phi, corner) - eval_state(phi, multiply(multiply(p, S.apply(corner)), p))
            assert value.real >= -1e-12


# -- renormalize ---------------------------------------------------------------


def test_renormalize_identity(rng):
    phi = random_diagonal_state(rng, 2, 4)
    assert _is_identity(renormalize(GridMap.identity(phi.grid, 2), phi))


def test_renormalize_scaled_corners(rng):
    m, n = 5, 2
    phi = random_diagonal_state(rng, n, m)
    c = np.array([0.5, 3.0])
    corners = np.zeros((n, n, m, m))
    for i in range(n):
        for j in range(n):
            corners[i, j] = np.sqrt(c[i] * c[j]) * np.eye(m)
    B = BlockFormMap(phi.grid, corners)
    np.testing.assert_allclose(B.apply(unit(phi.grid, n)).values[0], np.diag(c))
    Rt = renormalize(B, phi)
    # sqrt(c_i c_j) / sqrt(c_i c_j) is 1 only up to one rounding
    assert sup_norm(Rt.apply(unit(phi.grid, n)) - unit(phi.grid, n)) <= 4e-16
    np.testing.assert_allclose(Rt.corners, np.broadcast_to(np.eye(m), (n, n, m, m)), rtol=0, atol=4e-16)


def test_renormalize_unital_on_admissible_inputs(rng):
    for _ in range(50):
        phi = random_diagonal_state(rng, int(rng.integers(2, 4)), 10)
        S = admissible_map(rng, phi)
        R = add_corrections(compress_blocks(S), S, phi)
        Rt = renormalize(R, phi)
        assert sup_norm(Rt.apply(unit(phi.grid, phi.n)) - unit(phi.grid, phi.n)) <= 1e-9


def test_literal_reading_breaks_unitality(rng):
    phi = random_diagonal_state(rng, 2, 8)
    S = admissible_map(rng, phi)
    lit = reformulate(S, phi, literal=True)
    fixed = reformulate(S, phi)
    one = unit(phi.grid, 2)
    assert sup_norm(fixed.apply(one) - one) <= 1e-12
    assert sup_norm(lit.apply(one) - one) > 0.5


# -- reformulate ---------------------------------------------------------------


def test_reformulate_identity_exact(rng):
    for n in (2, 3):
        phi = random_diagonal_state(rng, n, 7)
        assert _is_identity(reformulate(GridMap.identity(phi.grid, n), phi))


@pytest.mark.parametrize("source", ["build_T", "state_map", "pinching", "admissible"])
def test_reformulate_outputs(rng, source):
    phi = random_diagonal_state(rng, 2, 16)
    if source == "build_T":
        S, _ = build_T(phi, function_family("default", phi.grid), 0.2, probes=[])
    elif source == "state_map":
        S = state_map(phi)
    elif source == "pinching":
        S = pinching_map(phi.grid, 2)
    else:
        S = admissible_map(rng, phi)
    Rt = reformulate(S, phi)
    rep = Rt.verify_ucp(1e-9)
    assert rep.is_ucp
    assert Rt.state_defect(phi) <= 1e-9
    assert _leakage(Rt, rng) <= 1e-12
    assert Rt.hermitian_symmetry_defect() <= 1e-12
    # corner-wise UCP report agrees with the generic Choi check
    generic = verify_ucp(Rt.to_gridmap())
    assert generic.min_choi_eigenvalue == pytest.approx(rep.min_choi_eigenvalue, abs=1e-12)
    assert generic.unitality_defect == pytest.approx(rep.unitality_defect, abs=1e-14)
    assert numerical_rank(Rt.to_gridmap()) <= numerical_rank(S) + phi.n


def test_hermitian_symmetry_pointwise(rng):
    phi = random_diagonal_state(rng, 3, 6)
    Rt = reformulate(admissible_map(rng, phi), phi)
    f = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    for i in range(3):
        for j in range(3):
            rij = Rt.corners[i, j] @ np.conj(f)
            rji = Rt.corners[j, i] @ f
            np.testing.assert_allclose(rji, np.conj(rij), atol=1e-13)


def test_rank_can_grow_beyond_n_under_compression():
    """A rank-2 UCP state-preserving map whose normal form has rank n^2 = 9."""
    n, m = 3, 4
    phi = random_diagonal_state(np.random.default_rng(1), n, m)
    w = phi.functional()
    A = np.ones((n, n)) - np.eye(n)
    ops = np.zeros((m, m, n * n, n * n), dtype=complex)
    for k in range(m):
        for j in range(m):
            ops[k, j] = superop_functional(w[j], np.eye(n)) + 0.02 * superop_functional(
                w[j].real.max() * A * phi.mu[j] / phi.mu.max(), A
            )
    S = GridMap.from_dense(phi.grid, ops)
    assert verify_ucp(S).is_ucp and state_defect(S, phi) <= 1e-12
    Rt = reformulate(S, phi)
    assert numerical_rank(S) == 2
    assert numerical_rank(Rt.to_gridmap()) > numerical_rank(S) + n


# -- preconditions -------------------------------------------------------------


def test_precondition_errors(rng):
    phi = random_diagonal_state(rng, 2, 5)
    g = Grid(5)
    with pytest.raises(PreconditionError) as e:
        reformulate(GridMap.identity(g, 2), random_state(rng, 2, 5))
    assert e.value.hypothesis == "diagonal"
    with pytest.raises(PreconditionError) as e:
        reformulate(GridMap.identity(g, 2).scaled(0.5), phi)
    assert e.value.hypothesis == "UCP"
    u = np.array([[0, 1], [1, 0]])
    with pytest.raises(PreconditionError) as e:
        reformulate(GridMap.pointwise(g, superop_congruence(u)), make_state(phi.mu, np.broadcast_to(np.diag([1.5, 0.5]), (5, 2, 2))))
    assert e.value.hypothesis == "phi-preservation"
    with pytest.raises(PreconditionError) as e:
        reformulate(GridMap.identity(g, 2), make_state(phi.mu, np.broadcast_to(np.diag([2.0, 0.0]), (5, 2, 2))))
    assert e.value.hypothesis == "faithful-corners"
    with pytest.raises(PreconditionError) as e:
        BlockFormMap.from_gridmap(GridMap.pointwise(g, superop_congruence(u)))
    assert e.value.hypothesis == "block-form"


def test_amplification_ratio(rng):
    phi = random_diagonal_state(rng, 2, 6)
    S = admissible_map(rng, phi)
    Rt = reformulate(S, phi)
    probes = [tensor_embed(matrix_unit(2, 0, 1), np.ones(6), phi.grid), unit(phi.grid, 2)]
    ratio = amplification(S, Rt, probes)
    assert np.isfinite(ratio) and ratio >= 0
    assert amplification(GridMap.identity(phi.grid, 2), reformulate(GridMap.identity(phi.grid, 2), phi), probes) == 0
