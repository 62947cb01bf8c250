"""Symmetric low-rank matrices ``W M W^T`` and Riccati residuals in that form."""
from __future__ import annotations

import numpy as np

from .densekernels import truncated_psd_factor

__all__ = [
    "LowRankSym",
    "lowrank_gram",
    "riccati_residual_lowrank",
    "signed_factor",
    "truncate_to_residual",
]


class LowRankSym:
    """Symmetric matrix ``W M W^T`` with a tall factor ``W``."""

    def __init__(self, W: np.ndarray, M: np.ndarray):
        self.W = W
        self.M = 0.5 * (M + M.T)

    def norm(self) -> float:
        if self.W.shape[1] == 0:
            return 0.0
        _, R = np.linalg.qr(self.W)
        return float(np.linalg.norm(R @ self.M @ R.T, "fro"))

    def toarray(self) -> np.ndarray:
        return self.W @ self.M @ self.W.T


def lowrank_gram(*terms: LowRankSym) -> np.ndarray:
    """Frobenius inner products of all pairs of ``terms``.

    The factors are orthonormalized together first; taking traces of the
    raw factors loses everything to cancellation near convergence.
    """
    widths = [t.W.shape[1] for t in terms]
    _, R = np.linalg.qr(np.hstack([t.W for t in terms]))
    offs = np.concatenate([[0], np.cumsum(widths)])
    small = [R[:, offs[i]:offs[i + 1]] @ t.M @ R[:, offs[i]:offs[i + 1]].T for i, t in enumerate(terms)]
    k = len(terms)
    G = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            G[i, j] = G[j, i] = float(np.sum(small[i] * small[j]))
    return G


def riccati_residual_lowrank(A, B, C, Q, D=None) -> LowRankSym:
    """``R(X) = A X + X A^T - X B B^T X + C^T C`` for ``X = Q D Q^T`` (``D = I`` if omitted)."""
    r, q = Q.shape[1], C.shape[0]
    if D is None:
        D = np.eye(r)
    W = np.hstack([A.dot(Q), Q, C.T])
    DQB = D @ (Q.T @ B)
    M = np.zeros((2 * r + q, 2 * r + q))
    M[:r, r:2 * r] = D
    M[r:2 * r, :r] = D
    M[r:2 * r, r:2 * r] = -DQB @ DQB.T
    M[2 * r:, 2 * r:] = np.eye(q)
    return LowRankSym(W, M)


def signed_factor(V, Y, tol):
    """``(Q, D)`` with ``Q D Q^T = V Y V^T`` up to ``tol``; ``D`` may be indefinite."""
    if Y.shape[0] == 0:
        return np.zeros((V.shape[0], 0)), np.zeros((0, 0))
    w, E = np.linalg.eigh(0.5 * (Y + Y.T))
    keep = np.abs(w) > tol * max(np.abs(w).max(), np.finfo(float).tiny)
    return V @ E[:, keep], np.diag(w[keep])


def truncate_to_residual(A, B, C, V, Y, tol: float, target: float):
    """Factor ``P`` of ``V Y V^T`` truncated at ``tol``, tightened while needed.

    Dropping eigenvalues of ``Y`` perturbs the Riccati residual by roughly
    ``||A||`` times the dropped mass, which matters for stiff ``A``.  The
    tolerance is divided by 100 until the residual norm of ``P P^T`` is at
    most ``target`` or the tolerance reaches rounding level.

    Returns ``(P, residual_norm, tol_used)``.
    """
    while True:
        P = V @ truncated_psd_factor(Y, tol, neg_tol=1e-6)
        res = riccati_residual_lowrank(A, B, C, P).norm()
        if res <= target or tol <= 1e-15:
            return P, res, tol
        tol = max(tol / 100.0, 1e-15)
