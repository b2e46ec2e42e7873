"""Small dense linear algebra.

Matrices are plain ``numpy`` arrays (complex or real, at most 8x8 in
practice).  The products are thin shape-checked wrappers around numpy; the
eigen-solver and the inverse are written out because their failure modes
(Hermiticity, pivot size) are part of the contract.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonRealTraceError, NotHermitianError, ShapeError, SingularMatrixError

HERMITIAN_TOL = 1e-10
INVERSE_RESIDUAL_TOL = 1e-9
MAX_CONDITION = 1e12

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = np.stack([SIGMA_X, SIGMA_Y, SIGMA_Z])


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-d matrix, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    a, b = _as_matrix(a), _as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def kron(a, b) -> np.ndarray:
    """Kronecker product, ``out[i*p + k, j*q + l] = a[i, j] * b[k, l]``."""
    return np.kron(_as_matrix(a), _as_matrix(b))


def dagger(a) -> np.ndarray:
    return _as_matrix(a).conj().T


def trace_real(a, tol: float = 1e-12) -> float:
    a = _as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"trace of non-square matrix {a.shape}")
    tr = np.trace(a)
    if abs(tr.imag) > tol:
        raise NonRealTraceError(f"trace has imaginary part {tr.imag:.3e} > {tol:.1e}")
    return float(tr.real)


@dataclass(frozen=True)
class HermitianCheckReport:
    max_asymmetry: float

    def is_hermitian_at(self, tol: float = HERMITIAN_TOL) -> bool:
        return self.max_asymmetry <= tol


def hermitian_check(a) -> HermitianCheckReport:
    a = _as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"non-square matrix {a.shape}")
    return HermitianCheckReport(float(np.max(np.abs(a - a.conj().T))))


def sym_eigvals(a, tol: float = HERMITIAN_TOL, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a small Hermitian matrix, ascending.

    Cyclic complex Jacobi: each sweep annihilates every off-diagonal pair with a
    unitary plane rotation.  Converges quadratically once the off-diagonal mass
    is small; near-degenerate spectra are handled without root finding.
    """
    a = _as_matrix(a)
    report = hermitian_check(a)
    scale = max(1.0, float(np.max(np.abs(a))))
    if not report.is_hermitian_at(tol * scale):
        raise NotHermitianError(f"max asymmetry {report.max_asymmetry:.3e} exceeds {tol:.1e}")
    m = np.array(0.5 * (a + a.conj().T), dtype=complex)
    n = m.shape[0]
    if n == 1:
        return np.array([m[0, 0].real])
    norm = np.linalg.norm(m)
    if norm == 0.0:
        return np.zeros(n)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.abs(m - np.diag(np.diag(m))) ** 2))
        if off <= 1e-15 * norm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = m[p, q]
                mag = abs(apq)
                if mag <= 1e-300:
                    continue
                # phase-rotate so the pivot is real, then a real Jacobi rotation
                phase = apq / mag
                app, aqq = m[p, p].real, m[q, q].real
                tau = (aqq - app) / (2.0 * mag)
                t = np.sign(tau) / (abs(tau) + np.hypot(1.0, tau)) if tau != 0 else 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rot = np.eye(n, dtype=complex)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s * phase
                rot[q, p] = -s * np.conj(phase)
                m = rot.conj().T @ m @ rot
                m[p, q] = m[q, p] = 0.0
    return np.sort(np.diag(m).real)


def inverse_small(a, max_condition: float = MAX_CONDITION) -> np.ndarray:
    """Inverse by Gauss-Jordan elimination with partial pivoting.

    Raises :class:`SingularMatrixError` when a pivot falls below
    ``norm / max_condition``; the error carries the pivot magnitude.
    """
    a = _as_matrix(a)
    n = a.shape[0]
    if n != a.shape[1]:
        raise ShapeError(f"cannot invert non-square matrix {a.shape}")
    if n > 8:
        raise ShapeError(f"inverse_small supports at most 8x8, got {n}x{n}")
    dtype = complex if np.iscomplexobj(a) else float
    aug = np.hstack([np.array(a, dtype=dtype), np.eye(n, dtype=dtype)])
    norm = float(np.max(np.sum(np.abs(a), axis=1)))
    if norm == 0.0:
        raise SingularMatrixError("zero matrix", pivot=0.0)
    floor = norm / max_condition
    for col in range(n):
        piv = col + int(np.argmax(np.abs(aug[col:, col])))
        pivot = abs(aug[piv, col])
        if pivot <= floor:
            raise SingularMatrixError(
                f"pivot {pivot:.3e} below {floor:.3e} in column {col}", pivot=float(pivot)
            )
        if piv != col:
            aug[[col, piv]] = aug[[piv, col]]
        aug[col] /= aug[col, col]
        for row in range(n):
            if row != col and aug[row, col] != 0:
                aug[row] -= aug[row, col] * aug[col]
    inv = aug[:, n:]
    # a rough condition estimate from the 1-norms
    cond = norm * float(np.max(np.sum(np.abs(inv), axis=1)))
    if cond > max_condition:
        raise SingularMatrixError(f"condition estimate {cond:.3e} exceeds {max_condition:.1e}", pivot=0.0)
    return inv


def bloch_operator(v) -> np.ndarray:
    """``v . sigma`` for a real 3-vector."""
    return np.tensordot(np.asarray(v, dtype=float), PAULI, axes=1)
