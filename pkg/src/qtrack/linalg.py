"""Hermitian/unitary linear algebra used throughout the package.

Hermitian matrices are mapped to real N**2 vectors through an orthonormal
basis (under the trace inner product), so that ``vec(A) @ vec(B) ==
Tr(A @ B)``. The basis is ordered as the diagonal units E_ii, followed, for
each i < j in row-major order, by (E_ij + E_ji)/sqrt(2) and
i(E_ij - E_ji)/sqrt(2).
"""

import warnings
from functools import lru_cache

import numpy as np
import scipy.linalg

from .errors import BranchCutWarning, DimensionError, InvalidInput

HERMITIAN_TOL = 1e-12
SQRT2 = np.sqrt(2.0)


def hermiticity_error(m):
    m = np.asarray(m)
    return float(np.max(np.abs(m - np.swapaxes(m, -1, -2).conj()), initial=0.0))


def check_hermitian(m, tol=HERMITIAN_TOL, name="matrix"):
    m = np.asarray(m, dtype=np.complex128)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise DimensionError(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInput(f"{name} has non-finite entries")
    err = hermiticity_error(m)
    if err > tol:
        raise InvalidInput(f"{name} is not Hermitian (max |M - M^dag| = {err:.3g})")
    return m


def unitarity_error(u):
    u = np.asarray(u)
    n = u.shape[-1]
    return float(np.linalg.norm(u.conj().T @ u - np.eye(n)))


def dagger(m):
    return np.swapaxes(np.asarray(m), -1, -2).conj()


def commutator(a, b):
    return a @ b - b @ a


@lru_cache(maxsize=None)
def _offdiag_index(n):
    iu, ju = np.triu_indices(n, k=1)
    return iu, ju


def vec_hermitian(m, check=True):
    """Real coordinates of a Hermitian matrix (or a stack of them).

    Parameters
    ----------
    m : array_like, shape (..., N, N)
    check : bool
        Reject inputs whose anti-Hermitian part exceeds ``1e-12``.

    Returns
    -------
    ndarray, shape (..., N**2)
    """
    m = np.asarray(m, dtype=np.complex128)
    if check:
        check_hermitian(m, name="vec_hermitian input")
    n = m.shape[-1]
    iu, ju = _offdiag_index(n)
    diag = np.real(np.diagonal(m, axis1=-2, axis2=-1))
    upper = m[..., iu, ju]
    off = np.empty(m.shape[:-2] + (2 * len(iu),))
    off[..., 0::2] = SQRT2 * upper.real
    off[..., 1::2] = SQRT2 * upper.imag
    return np.concatenate([diag, off], axis=-1)


def unvec_hermitian(v):
    """Inverse of :func:`vec_hermitian`."""
    v = np.asarray(v, dtype=float)
    n2 = v.shape[-1]
    n = int(round(np.sqrt(n2)))
    if n * n != n2:
        raise DimensionError(f"vector length {n2} is not a perfect square")
    iu, ju = _offdiag_index(n)
    m = np.zeros(v.shape[:-1] + (n, n), dtype=np.complex128)
    idx = np.arange(n)
    m[..., idx, idx] = v[..., :n]
    upper = (v[..., n::2] + 1j * v[..., n + 1::2]) / SQRT2
    m[..., iu, ju] = upper
    m[..., ju, iu] = upper.conj()
    return m


@lru_cache(maxsize=None)
def _basis(n):
    return unvec_hermitian(np.eye(n * n))


def hermitian_basis(n):
    """The N**2 orthonormal Hermitian basis matrices, in ``vec_hermitian`` order."""
    return _basis(n).copy()


def expm_hermitian(h, t=1.0):
    """exp(-i h t) for Hermitian ``h`` via eigendecomposition."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def log_unitary(u, warn_tol=1e-10):
    """Hermitian A with exp(iA) = U and spectrum in (-pi, pi].

    Uses a complex Schur decomposition, which for a normal matrix yields an
    orthonormal eigenbasis even with degenerate eigenvalues.

    Warns
    -----
    BranchCutWarning
        When an eigenvalue lies within ``warn_tol`` of -1. The angle pi is
        used in that case.
    """
    u = np.asarray(u, dtype=np.complex128)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {u.shape}")
    if unitarity_error(u) > 1e-8:
        raise InvalidInput("log_unitary input is not unitary")
    t, z = scipy.linalg.schur(u, output="complex")
    eig = np.diagonal(t)
    eig = eig / np.abs(eig)
    if np.any(np.abs(eig + 1.0) < warn_tol):
        warnings.warn("unitary has an eigenvalue at -1; principal log is ambiguous",
                      BranchCutWarning, stacklevel=2)
    theta = np.angle(eig)
    theta = np.where(theta <= -np.pi, np.pi, theta)
    a = (z * theta) @ z.conj().T
    return 0.5 * (a + a.conj().T)


def geodesic_distance(u, v):
    """Bi-invariant distance ||log(U^dag V)||_F on U(N)."""
    return float(np.linalg.norm(log_unitary(np.asarray(u).conj().T @ v)))


def random_unitary(n, rng):
    """Haar-ish unitary from QR of a complex Gaussian matrix (phase-fixed)."""
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def random_hermitian(n, rng, scale=1.0):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * 0.5 * (a + a.conj().T)


def pinv_singular_values(s, rtol):
    """Pseudo-inverse of singular values with a relative cutoff."""
    s = np.asarray(s, dtype=float)
    cutoff = rtol * (s[0] if s.size else 0.0)
    inv = np.zeros_like(s)
    keep = s > cutoff
    inv[keep] = 1.0 / s[keep]
    return inv


def check_density(rho, tol=1e-10, name="rho"):
    """Validate a density matrix: Hermitian, PSD to -1e-12, unit trace."""
    rho = check_hermitian(rho, tol, name)
    w = np.linalg.eigvalsh(rho)
    if w[0] < -1e-12:
        raise InvalidInput(f"{name} has negative eigenvalue {w[0]:.3g}")
    if abs(np.trace(rho).real - 1.0) > tol:
        raise InvalidInput(f"{name} trace is {np.trace(rho).real:.12g}, expected 1")
    return rho


def multiplicities(values, tol=1e-10):
    """Multiplicities of a descending-sorted spectrum, grouping values within ``tol``."""
    vals = np.sort(np.asarray(values, dtype=float))[::-1]
    counts = []
    start = 0
    for k in range(1, len(vals) + 1):
        if k == len(vals) or abs(vals[k] - vals[start]) > tol:
            counts.append(k - start)
            start = k
    return tuple(counts)


def sorted_eigh(h):
    """Eigendecomposition with descending eigenvalues and phase-fixed eigenvectors.

    Ties keep the ascending order that ``eigh`` produced; each eigenvector is
    rotated so its largest-magnitude entry is real and positive.
    """
    w, v = np.linalg.eigh(np.asarray(h, dtype=np.complex128))
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    idx = np.argmax(np.abs(v) > np.abs(v).max(axis=0) - 1e-12, axis=0)
    ph = v[idx, np.arange(v.shape[1])]
    v = v * (np.abs(ph) / ph)
    return w, v
