"""Dense kernels for small projected problems and brute-force oracles."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .errors import (
    IndefiniteMatrixError,
    NonFiniteInputError,
    RiccatiSolveError,
    SylvesterError,
    UnstableMatrixError,
)

__all__ = [
    "SchurForm",
    "real_schur",
    "qr_economy",
    "solve_lyapunov_dense",
    "solve_riccati_dense",
    "dense_newton_kleinman",
    "riccati_residual_dense",
    "truncated_psd_factor",
    "spectral_abscissa",
]


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteInputError("input contains NaN or Inf entries")


@dataclass(frozen=True)
class SchurForm:
    """Real Schur decomposition ``M = U T U^T``."""

    U: np.ndarray
    T: np.ndarray
    eigenvalues: np.ndarray


def _quasi_triangular_eigenvalues(T: np.ndarray) -> np.ndarray:
    n = T.shape[0]
    eigs = np.empty(n, dtype=complex)
    i = 0
    while i < n:
        if i + 1 < n and T[i + 1, i] != 0.0:
            eigs[i:i + 2] = np.linalg.eigvals(T[i:i + 2, i:i + 2])
            i += 2
        else:
            eigs[i] = T[i, i]
            i += 1
    return eigs


def real_schur(M: np.ndarray) -> SchurForm:
    M = np.asarray(M, dtype=float)
    _check_finite(M)
    T, U = sla.schur(M, output="real")
    return SchurForm(U=U, T=T, eigenvalues=_quasi_triangular_eigenvalues(T))


def qr_economy(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Economy QR with a nonnegative diagonal in ``R``.

    Parameters
    ----------
    M : (n, k) array with n >= k

    Returns
    -------
    Q : (n, k) array with orthonormal columns
    R : (k, k) upper triangular array, ``diag(R) >= 0``
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] < M.shape[1]:
        raise ValueError(f"qr_economy needs a tall matrix, got shape {M.shape}")
    _check_finite(M)
    Q, R = np.linalg.qr(M, mode="reduced")
    signs = np.where(np.diag(R) < 0.0, -1.0, 1.0)
    return Q * signs, R * signs[:, None]


def solve_lyapunov_dense(F: np.ndarray, W: np.ndarray, *, stability_tol: float = 0.0) -> np.ndarray:
    """Solve ``F Y + Y F^T + W = 0`` by the Bartels-Stewart method.

    ``F`` is reduced to real Schur form once; the triangular Sylvester
    problem is handed to LAPACK ``trsyl``.  Raises
    :class:`UnstableMatrixError` if an eigenvalue of ``F`` has real part
    ``>= -stability_tol``.
    """
    F = np.asarray(F, dtype=float)
    W = np.asarray(W, dtype=float)
    n = F.shape[0]
    if F.shape != (n, n) or W.shape != (n, n):
        raise ValueError("F and W must be square and of equal size")
    if n == 0:
        return np.zeros((0, 0))
    _check_finite(F, W)
    schur = real_schur(F)
    worst = int(np.argmax(schur.eigenvalues.real))
    if schur.eigenvalues[worst].real >= -stability_tol:
        raise UnstableMatrixError(
            f"coefficient matrix is not stable: eigenvalue {schur.eigenvalues[worst]:.6g}",
            eigenvalue=complex(schur.eigenvalues[worst]),
        )
    U, T = schur.U, schur.T
    C = -(U.T @ W @ U)
    X, scale, info = lapack.dtrsyl(T, T, C, trana="N", tranb="T", isgn=1)
    if info < 0:
        raise SylvesterError(f"trsyl argument error (info={info})")
    if info == 1 or scale == 0.0:
        raise SylvesterError("Sylvester pair is nearly singular (close eigenvalues of F and -F)")
    Y = U @ (X / scale) @ U.T
    return 0.5 * (Y + Y.T)


def riccati_residual_dense(F, G, H, Y) -> np.ndarray:
    """Residual ``F Y + Y F^T - Y G G^T Y + H^T H``."""
    YG = Y @ G
    R = F @ Y
    return R + R.T - YG @ YG.T + H.T @ H


def dense_newton_kleinman(F, G, H, Y0=None, *, tol: float = 1e-12, maxiter: int = 100):
    """Exact Newton-Kleinman on ``F Y + Y F^T - Y G G^T Y + H^T H = 0``.

    Every step solves the closed-loop Lyapunov equation exactly.
    ``Y0`` must be stabilizing; ``Y0 = 0`` requires a stable ``F``.

    Returns
    -------
    Y : ndarray
    iterates : list of ndarray
        ``[Y0, Y1, ...]``.
    """
    F = np.asarray(F, dtype=float)
    G = np.asarray(G, dtype=float).reshape(F.shape[0], -1)
    H = np.asarray(H, dtype=float).reshape(-1, F.shape[0])
    n = F.shape[0]
    Y = np.zeros((n, n)) if Y0 is None else np.array(Y0, dtype=float)
    HtH = H.T @ H
    scale = max(np.linalg.norm(HtH, "fro"), np.finfo(float).tiny)
    iterates = [Y.copy()]
    res = np.linalg.norm(riccati_residual_dense(F, G, H, Y), "fro")
    best = res
    stalls = 0
    for _ in range(maxiter):
        if res <= tol * scale:
            return Y, iterates
        YG = Y @ G
        Y = solve_lyapunov_dense(F - YG @ G.T, YG @ YG.T + HtH)
        iterates.append(Y.copy())
        res = np.linalg.norm(riccati_residual_dense(F, G, H, Y), "fro")
        # the early phase from an overshooting Y1 contracts only linearly
        if res < 0.9 * best:
            best = res
            stalls = 0
        else:
            best = min(best, res)
            stalls += 1
            if stalls >= 5:
                break
    if res <= tol * scale:
        return Y, iterates
    raise RiccatiSolveError(
        f"dense Newton-Kleinman stagnated at relative residual {res / scale:.3e}"
    )


def solve_riccati_dense(F, G, H, *, refine: int = 3) -> np.ndarray:
    """Stabilizing solution of ``F Y + Y F^T - Y G G^T Y + H^T H = 0``.

    Uses the ordered real Schur form of the Hamiltonian matrix and polishes
    the result with at most ``refine`` Newton-Kleinman steps.  Falls back to
    dense Newton-Kleinman from zero when the ordering fails and ``F`` is
    stable.

    Parameters
    ----------
    F : (n, n) array
    G : (n, p) array
    H : (q, n) array

    Returns
    -------
    Y : (n, n) symmetric positive semidefinite array
    """
    F = np.asarray(F, dtype=float)
    n = F.shape[0]
    G = np.asarray(G, dtype=float).reshape(n, -1)
    H = np.asarray(H, dtype=float).reshape(-1, n)
    _check_finite(F, G, H)
    if n == 0:
        return np.zeros((0, 0))
    HtH = H.T @ H
    GGt = G @ G.T
    if not np.any(GGt):
        return solve_lyapunov_dense(F, HtH)
    if not np.any(HtH):
        if spectral_abscissa(F) < 0:
            return np.zeros((n, n))
    try:
        Y = _hamiltonian_schur(F, GGt, HtH)
    except RiccatiSolveError:
        if spectral_abscissa(F) >= 0:
            raise
        Y, _ = dense_newton_kleinman(F, G, H)
        return Y
    scale = max(np.linalg.norm(HtH, "fro"), np.finfo(float).tiny)
    res = np.linalg.norm(riccati_residual_dense(F, G, H, Y), "fro")
    for _ in range(refine):
        if res <= 1e-13 * scale:
            break
        YG = Y @ G
        try:
            Ynew = solve_lyapunov_dense(F - YG @ G.T, YG @ YG.T + HtH)
        except (UnstableMatrixError, SylvesterError):
            break
        new_res = np.linalg.norm(riccati_residual_dense(F, G, H, Ynew), "fro")
        if new_res >= res:
            break
        Y, res = Ynew, new_res
    return Y


def _hamiltonian_schur(F, GGt, HtH):
    n = F.shape[0]
    # standard form A^T X + X A - X R X + Q = 0 with A = F^T
    Ham = np.block([[F.T, -GGt], [-HtH, -F]])
    hnorm = np.linalg.norm(Ham, 1)
    T, Z, sdim = sla.schur(Ham, output="real", sort="lhp")
    eigs = _quasi_triangular_eigenvalues(T)
    if np.min(np.abs(eigs.real)) <= 1e-13 * hnorm * n:
        raise RiccatiSolveError("Hamiltonian matrix has eigenvalues on the imaginary axis")
    if sdim != n:
        raise RiccatiSolveError(f"Hamiltonian Schur ordering found {sdim} stable eigenvalues, expected {n}")
    U1, U2 = Z[:n, :n], Z[n:, :n]
    try:
        Y = np.linalg.solve(U1.T, U2.T).T
    except np.linalg.LinAlgError as exc:
        raise RiccatiSolveError("stable invariant subspace is not a graph subspace") from exc
    if np.linalg.cond(U1) > 1e14:
        raise RiccatiSolveError("stable invariant subspace basis is ill conditioned")
    return 0.5 * (Y + Y.T)


def truncated_psd_factor(Y: np.ndarray, tol: float = 1e-12, *, neg_tol: float | None = None) -> np.ndarray:
    """Low-rank factor ``Z`` with ``Z Z^T ~ Y`` for a symmetric PSD ``Y``.

    Eigenvalues above ``tol * lambda_max`` are retained.  Eigenvalues below
    ``-neg_tol * ||Y||_2`` (``neg_tol`` defaults to ``tol``) raise
    :class:`IndefiniteMatrixError`.
    """
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    _check_finite(Y)
    w, Q = np.linalg.eigh(0.5 * (Y + Y.T))
    norm2 = np.max(np.abs(w))
    if norm2 == 0.0:
        return np.zeros((n, 0))
    neg_tol = tol if neg_tol is None else neg_tol
    if w[0] < -neg_tol * norm2:
        raise IndefiniteMatrixError(
            f"matrix is indefinite: smallest eigenvalue {w[0]:.3e}, norm {norm2:.3e}"
        )
    keep = w > tol * max(w[-1], 0.0)
    if w[-1] <= 0.0:
        keep[:] = False
    idx = np.nonzero(keep)[0][::-1]
    return Q[:, idx] * np.sqrt(w[idx])


def spectral_abscissa(M: np.ndarray) -> float:
    """Largest real part of the eigenvalues of ``M``."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("spectral_abscissa needs a square matrix")
    if M.shape[0] == 0:
        return -np.inf
    _check_finite(M)
    try:
        if np.array_equal(M, M.T):
            return float(np.linalg.eigvalsh(M)[-1])
        return float(np.max(np.linalg.eigvals(M).real))
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("eigenvalue computation did not converge") from exc
