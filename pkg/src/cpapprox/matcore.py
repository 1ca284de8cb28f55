"""Dense Hermitian linear algebra on small matrices.

Every spectral function goes through :func:`eig_herm`; matrices here are a
few rows wide, so a single LAPACK ``eigh`` call per operation is both the
fastest and the most reproducible option.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import DimensionError, EigenError, NotPSD, SpectralFloorViolation

HERMITIAN_TOL = 1e-12
CLAMP_TOL = 1e-10


class SpectralDecomposition(NamedTuple):
    eigenvalues: np.ndarray  # ascending, real
    eigenvectors: np.ndarray  # unitary, columns


class PsdWitness(NamedTuple):
    ok: bool
    lambda_min: float
    vector: np.ndarray


def as_hermitian(a, tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Validate that ``a`` is square and Hermitian, return its symmetrization."""
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    skew = float(np.max(np.abs(a - a.conj().T))) if a.size else 0.0
    if skew > tol * scale:
        raise DimensionError(f"matrix is not Hermitian (max |A - A*| = {skew:.3e})")
    return 0.5 * (a + a.conj().T)


def eig_herm(a) -> SpectralDecomposition:
    a = as_hermitian(a)
    try:
        w, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise EigenError(f"eigh did not converge: {exc}") from exc
    residual = float(np.linalg.norm((v * w) @ v.conj().T - a, 2)) if a.size else 0.0
    if residual > 1e-10 * max(1.0, float(np.max(np.abs(w), initial=0.0))):
        raise EigenError("eigendecomposition failed the reconstruction check", residual)
    return SpectralDecomposition(w, v)


def _spectral_apply(dec: SpectralDecomposition, values: np.ndarray) -> np.ndarray:
    v = dec.eigenvectors
    out = (v * values) @ v.conj().T
    return 0.5 * (out + out.conj().T)


def psd_sqrt(a) -> np.ndarray:
    """Positive square root; eigenvalues in ``[-1e-10, 0)`` are clamped to zero."""
    dec = eig_herm(a)
    w = dec.eigenvalues
    if w.size and w[0] < -CLAMP_TOL:
        raise NotPSD(float(w[0]))
    return _spectral_apply(dec, np.sqrt(np.clip(w, 0.0, None)))


def psd_inv_sqrt(a, floor: float) -> np.ndarray:
    """Inverse square root of a matrix whose spectrum lies above ``floor``."""
    if floor <= 0:
        raise ValueError("floor must be positive")
    dec = eig_herm(a)
    w = dec.eigenvalues
    if w[0] < floor:
        raise SpectralFloorViolation(float(w[0]), floor)
    return _spectral_apply(dec, 1.0 / np.sqrt(w))


def op_norm(a) -> float:
    """Largest singular value."""
    a = np.asarray(a, dtype=complex)
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))


def op_norms(stack) -> np.ndarray:
    """Operator norms of a stack of matrices, shape ``(..., n, n) -> (...)``."""
    stack = np.asarray(stack, dtype=complex)
    return np.linalg.norm(stack, ord=2, axis=(-2, -1))


def is_psd(a, tol: float = 0.0) -> PsdWitness:
    """Return ``(ok, lambda_min, eigenvector)``; ``ok`` iff ``lambda_min >= -tol``."""
    dec = eig_herm(a)
    lam = float(dec.eigenvalues[0])
    return PsdWitness(lam >= -tol, lam, dec.eigenvectors[:, 0])


def min_eigenvalues(stack) -> np.ndarray:
    """Smallest eigenvalue of each Hermitian matrix in a stack (Hermitian part used)."""
    stack = np.asarray(stack, dtype=complex)
    herm = 0.5 * (stack + np.conj(np.swapaxes(stack, -1, -2)))
    return np.linalg.eigvalsh(herm)[..., 0]


def normalized_trace(a) -> complex:
    a = np.asarray(a)
    return complex(np.trace(a)) / a.shape[0]


def psd_sqrt_stack(stack) -> np.ndarray:
    """:func:`psd_sqrt` over a stack ``(..., n, n)`` with the same clamping rule."""
    stack = np.asarray(stack, dtype=complex)
    herm = 0.5 * (stack + np.conj(np.swapaxes(stack, -1, -2)))
    w, v = np.linalg.eigh(herm)
    if w.size and w[..., 0].min() < -CLAMP_TOL:
        raise NotPSD(float(w[..., 0].min()))
    root = np.sqrt(np.clip(w, 0.0, None))
    return (v * root[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))


def psd_inv_sqrt_stack(stack, floor: float) -> np.ndarray:
    stack = np.asarray(stack, dtype=complex)
    herm = 0.5 * (stack + np.conj(np.swapaxes(stack, -1, -2)))
    w, v = np.linalg.eigh(herm)
    if w.size and w[..., 0].min() < floor:
        raise SpectralFloorViolation(float(w[..., 0].min()), floor)
    return (v * (1.0 / np.sqrt(w))[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary via QR of a complex Gaussian matrix."""
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))
