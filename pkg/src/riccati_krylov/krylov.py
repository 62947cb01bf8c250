"""Block extended and rational Krylov bases with deflation.

A :class:`KrylovBasis` keeps an *active* orthonormal basis ``V`` (the space
the projected problem lives on) and a *pending* block ``N`` (the next block
``V_{m+1}``), so that the boundary of the Arnoldi-type relation

    (I - V V^T) A V = G S,     G orthonormal,

is always available for cheap residual norms.  For the extended space
``G = N`` and ``S`` is the last block row of ``T_under = [V, N]^T A V``.
For the rational space ``S`` is obtained from the pencil of
orthonormalization coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.spatial import ConvexHull, QhullError

from .densekernels import qr_economy
from .errors import BreakdownError, InvariantSubspaceError, ShiftSelectionError
from .sparsekernels import factorize, solve

__all__ = [
    "KrylovBasis",
    "ShiftPool",
    "deflate_block",
    "ek_init",
    "ek_expand",
    "rk_init",
    "rk_expand",
    "adaptive_shift",
    "estimate_spectral_bounds",
]

DEFAULT_DEFL_TOL = 1e-12


def deflate_block(W, against=None, tol: float = DEFAULT_DEFL_TOL):
    """Orthonormalize ``W`` against a basis, dropping dependent directions.

    Two classical Gram-Schmidt passes are applied, then the remainder is
    rank-revealed by an SVD with threshold ``tol * ||W||_2``.

    Parameters
    ----------
    W : (n, k) array
    against : (n, d) orthonormal array, :class:`KrylovBasis` or None
    tol : float

    Returns
    -------
    Q : (n, r) orthonormal array, orthogonal to ``against``
    rank : int
    coeffs : (d, k) array
    R : (r, k) array
        With ``W ~ against @ coeffs + Q @ R`` up to the dropped part.
    """
    W = np.asarray(W, dtype=float)
    if isinstance(against, KrylovBasis):
        V = against.V_all
    elif against is None:
        V = np.zeros((W.shape[0], 0))
    else:
        V = np.asarray(against, dtype=float)
    n, k = W.shape
    coeffs = np.zeros((V.shape[1], k))
    if k == 0:
        return np.zeros((n, 0)), 0, coeffs, np.zeros((0, 0))
    wnorm = np.linalg.norm(W, 2)
    if wnorm == 0.0:
        return np.zeros((n, 0)), 0, coeffs, np.zeros((0, k))
    Wr = W
    if V.shape[1]:
        for _ in range(2):
            c = V.T @ Wr
            Wr = Wr - V @ c
            coeffs += c
    s = np.linalg.svd(Wr, compute_uv=False)
    rank = int(np.sum(s > tol * wnorm))
    if rank == 0:
        return np.zeros((n, 0)), 0, coeffs, np.zeros((0, k))
    if rank == k:
        Q, R = qr_economy(Wr)
    else:
        U, s, Vh = np.linalg.svd(Wr, full_matrices=False)
        Q = U[:, :rank]
        R = s[:rank, None] * Vh[:rank]
    if V.shape[1]:
        c3 = V.T @ Q
        Q, R3 = qr_economy(Q - V @ c3)
        coeffs += c3 @ R
        R = R3 @ R
    return Q, rank, coeffs, R


@dataclass
class ShiftPool:
    """Start bounds and used poles for adaptive rational shifts."""

    s0: tuple
    used: list = field(default_factory=list)
    samples_per_edge: int = 2000

    def candidates(self) -> np.ndarray:
        pts = []
        for s in self.s0:
            pts.extend([complex(s), complex(s).conjugate()])
        return np.array(pts, dtype=complex)

    def register(self, s: complex) -> None:
        s = complex(s)
        if s.imag != 0.0:
            self.used.extend([s, s.conjugate()])
        else:
            self.used.append(s)


@dataclass
class KrylovBasis:
    kind: str
    A: object
    n: int
    V: np.ndarray
    T: np.ndarray
    gamma: np.ndarray
    start_coeffs: np.ndarray
    block_sizes: list
    N: np.ndarray
    B: Optional[np.ndarray] = None
    B_proj: Optional[np.ndarray] = None
    defl_tol: float = DEFAULT_DEFL_TOL
    deflation_log: list = field(default_factory=list)
    invariant: bool = False
    steps: int = 1
    # extended
    factor: object = None
    active_split: tuple = (0, 0)
    pending_split: tuple = (0, 0)
    S: Optional[np.ndarray] = None
    # rational
    AV: Optional[np.ndarray] = None
    AN: Optional[np.ndarray] = None
    shifts: list = field(default_factory=list)
    Kbar: Optional[np.ndarray] = None
    Hbar: Optional[np.ndarray] = None
    pencil_ok: bool = True
    boundary_source: str = "pencil"
    g: Optional[np.ndarray] = None
    w: Optional[np.ndarray] = None
    G: Optional[np.ndarray] = None
    Rg: Optional[np.ndarray] = None
    pool: Optional[ShiftPool] = None

    @property
    def dim(self) -> int:
        return self.V.shape[1]

    @property
    def m(self) -> int:
        return len(self.block_sizes)

    @property
    def block_size(self) -> int:
        return self.block_sizes[0]

    @property
    def pending_size(self) -> int:
        return self.N.shape[1]

    @property
    def memory_vectors(self) -> int:
        return self.dim + self.pending_size

    @property
    def V_all(self) -> np.ndarray:
        return np.hstack([self.V, self.N]) if self.pending_size else self.V

    @property
    def Tbar(self) -> np.ndarray:
        """``[V, N]^T A V`` (extended) -- ``T`` stacked over the boundary row."""
        if self.kind != "extended":
            raise AttributeError("Tbar is defined for the extended space only")
        return np.vstack([self.T, self.S])

    def gamma_full(self) -> np.ndarray:
        """``E_1 gamma`` padded to the active dimension."""
        out = np.zeros((self.dim, self.gamma.shape[1]))
        out[: self.gamma.shape[0]] = self.gamma
        return out

    def boundary(self):
        """Orthonormal ``G`` and ``S`` with ``(I - V V^T) A V = G S``."""
        if self.kind == "extended":
            return self.N, self.S
        return self.G, self.Rg @ self.w.T

    def relation_residual(self) -> float:
        """Frobenius norm of ``A V - V T - G S`` computed from scratch."""
        G, S = self.boundary()
        AV = self.A.dot(self.V)
        return float(np.linalg.norm(AV - self.V @ self.T - G @ S, "fro"))


def _project_B(basis, block):
    if basis.B is None:
        return
    rows = block.T @ basis.B
    basis.B_proj = rows if basis.B_proj is None else np.vstack([basis.B_proj, rows])


def _start_block(Cfactor, defl_tol):
    C = np.asarray(Cfactor, dtype=float)
    if C.ndim == 1:
        C = C[:, None]
    Q1, r1, _, R1 = deflate_block(C, None, defl_tol)
    if r1 == 0:
        raise InvariantSubspaceError("starting block has numerical rank zero")
    return C, Q1, R1


# ------------------------------------------------------------------ extended


def ek_init(A, factor, Cfactor, *, B=None, defl_tol: float = DEFAULT_DEFL_TOL) -> KrylovBasis:
    """Extended Krylov basis started from ``[C^T, A^{-1} C^T]``.

    ``A`` needs ``dot`` and ``factor`` needs ``solve`` (``A^{-1}``).
    ``start_coeffs`` holds ``V_1^T Cfactor`` so that ``Cfactor = V_1 start_coeffs``.
    """
    C, Q1, R1 = _start_block(Cfactor, defl_tol)
    n = C.shape[0]
    Q2, r2, _, _ = deflate_block(factor.solve(Q1), Q1, defl_tol)
    V = np.hstack([Q1, Q2])
    start = np.vstack([R1, np.zeros((r2, C.shape[1]))])
    basis = KrylovBasis(
        kind="extended", A=A, n=n, V=V, T=np.zeros((0, 0)), gamma=start, start_coeffs=start,
        block_sizes=[V.shape[1]], N=np.zeros((n, 0)), B=None if B is None else np.asarray(B, float),
        defl_tol=defl_tol, factor=factor, active_split=(Q1.shape[1], r2),
    )
    if r2 < Q1.shape[1]:
        basis.deflation_log.append((1, Q1.shape[1] - r2))
    _project_B(basis, V)
    AV = A.dot(V)
    basis.T = V.T @ AV
    _ek_generate(basis, AV)
    return basis


def _ek_generate(basis: KrylovBasis, AVlast: np.ndarray) -> None:
    """Build the pending block from the last active block and its A-image."""
    r1, r2 = basis.active_split
    last = basis.V[:, basis.dim - (r1 + r2):]
    U1 = AVlast[:, :r1]
    U2 = basis.factor.solve(last[:, r1:]) if r2 else np.zeros((basis.n, 0))
    N1, k1, _, _ = deflate_block(U1, basis.V, basis.defl_tol)
    N2, k2, _, _ = deflate_block(U2, np.hstack([basis.V, N1]), basis.defl_tol)
    dropped = (r1 + r2) - (k1 + k2)
    if dropped:
        basis.deflation_log.append((basis.steps + 1, dropped))
    basis.N = np.hstack([N1, N2])
    basis.pending_split = (k1, k2)
    S = np.zeros((k1 + k2, basis.dim))
    if k1 + k2:
        # only the last block of A V has components outside the old basis
        S[:, basis.dim - (r1 + r2):] = basis.N.T @ AVlast
    basis.S = S
    basis.invariant = (k1 + k2) == 0


def ek_expand(basis: KrylovBasis) -> KrylovBasis:
    """Move the pending block into the active basis and generate the next one.

    Work per call: one product with ``A`` and one solve with ``A`` on a
    block, plus two Gram-Schmidt passes.
    """
    if basis.kind != "extended":
        raise ValueError("ek_expand needs an extended basis")
    if basis.pending_size == 0:
        raise InvariantSubspaceError("extended Krylov space is invariant; no new directions")
    N = basis.N
    AN = basis.A.dot(N)
    top = basis.V.T @ AN
    T = np.block([[basis.T, top], [basis.S, N.T @ AN]])
    basis.V = np.hstack([basis.V, N])
    basis.T = T
    basis.block_sizes.append(N.shape[1])
    basis.active_split = basis.pending_split
    _project_B(basis, N)
    basis.steps += 1
    _ek_generate(basis, AN)
    return basis


# ------------------------------------------------------------------ rational


def rk_init(A, Cfactor, pool: Optional[ShiftPool] = None, *, B=None,
            defl_tol: float = DEFAULT_DEFL_TOL) -> KrylovBasis:
    """Rational Krylov basis started from ``orth(C^T)``."""
    C, Q1, R1 = _start_block(Cfactor, defl_tol)
    n = C.shape[0]
    AV = A.dot(Q1)
    basis = KrylovBasis(
        kind="rational", A=A, n=n, V=Q1, T=Q1.T @ AV, gamma=R1, start_coeffs=R1,
        block_sizes=[Q1.shape[1]], N=np.zeros((n, 0)), B=None if B is None else np.asarray(B, float),
        defl_tol=defl_tol, AV=AV, AN=np.zeros((n, 0)), Kbar=np.zeros((Q1.shape[1], 0)),
        Hbar=np.zeros((Q1.shape[1], 0)), pool=pool,
    )
    _project_B(basis, Q1)
    return basis


def _rk_activate(basis: KrylovBasis, N: np.ndarray, AN: np.ndarray) -> None:
    top = basis.V.T @ AN
    left = N.T @ basis.AV
    basis.T = np.block([[basis.T, top], [left, N.T @ AN]])
    basis.V = np.hstack([basis.V, N])
    basis.AV = np.hstack([basis.AV, AN])
    basis.block_sizes.append(N.shape[1])
    _project_B(basis, N)


def _pad_rows(M, rows):
    if M.shape[0] == rows:
        return M
    return np.vstack([M, np.zeros((rows - M.shape[0], M.shape[1]))])


def rk_expand(basis: KrylovBasis, shift: Union[complex, Callable[[KrylovBasis], complex]]) -> KrylovBasis:
    """Activate the pending block and generate the next one with a pole.

    ``shift`` may be a callable; it is evaluated after activation so that it
    can look at the enlarged projected matrix.  A complex pole is processed
    together with its conjugate in real arithmetic: the real part of
    ``(A - sI)^{-1} V_last`` becomes active and the imaginary part pending.
    """
    if basis.kind != "rational":
        raise ValueError("rk_expand needs a rational basis")
    if basis.invariant:
        raise InvariantSubspaceError("rational Krylov space is invariant; no new directions")
    if basis.pending_size:
        _rk_activate(basis, basis.N, basis.AN)
        basis.N = np.zeros((basis.n, 0))
        basis.AN = np.zeros((basis.n, 0))
    s = shift(basis) if callable(shift) else shift
    s = complex(s)
    if abs(s.imag) <= 1e-14 * max(abs(s), 1.0):
        s = complex(s.real, 0.0)
    if any(abs(s - u) <= 1e-14 * max(abs(s), 1.0) for u in basis.shifts):
        raise ShiftSelectionError(f"shift {s} was already used")
    r = basis.block_sizes[-1]
    d = basis.dim
    J = np.arange(d - r, d)
    try:
        F = factorize(basis.A, s)
    except Exception as exc:
        raise BreakdownError(f"shifted factorization failed for shift {s}: {exc}") from exc
    W = solve(F, basis.V[:, J])
    basis.shifts.append(s)
    if basis.pool is not None:
        basis.pool.register(s)
    if s.imag == 0.0:
        W = W.real
        N, k, cV, R = deflate_block(W, basis.V, basis.defl_tol)
        c = np.vstack([cV, R])
        eJ = np.zeros_like(c)
        eJ[J, np.arange(r)] = 1.0
        newK, newH = c, s.real * c + eJ
        if k < r:
            basis.deflation_log.append((basis.steps + 1, r - k))
            basis.pencil_ok = False
        AN = basis.A.dot(N)
    else:
        sig, tau = s.real, s.imag
        a, b = W.real, W.imag
        Na, ka, cVa, Ra = deflate_block(a, basis.V, basis.defl_tol)
        AVa = basis.A.dot(Na)
        _rk_activate(basis, Na, AVa)
        N, k, cVb, Rb = deflate_block(b, basis.V, basis.defl_tol)
        rows = basis.dim + k
        ca = np.zeros((rows, r))
        ca[: d] = cVa
        ca[d:d + ka] = Ra
        cb = np.vstack([cVb, Rb])
        eJ = np.zeros((rows, r))
        eJ[J, np.arange(r)] = 1.0
        newK = np.hstack([ca, cb])
        newH = np.hstack([sig * ca - tau * cb + eJ, tau * ca + sig * cb])
        if ka < r or k < r:
            basis.deflation_log.append((basis.steps + 1, 2 * r - ka - k))
            basis.pencil_ok = False
        AN = basis.A.dot(N)
    rows = basis.dim + N.shape[1]
    basis.Kbar = np.hstack([_pad_rows(basis.Kbar, rows), _pad_rows(newK, rows)])
    basis.Hbar = np.hstack([_pad_rows(basis.Hbar, rows), _pad_rows(newH, rows)])
    basis.N, basis.AN = N, AN
    basis.invariant = N.shape[1] == 0
    basis.steps += 1
    _rk_boundary(basis)
    return basis


def _rk_boundary(basis: KrylovBasis) -> None:
    """Low-rank factors ``g w^T = (I - V V^T) A V`` of the rational relation."""
    d = basis.dim
    V, N, AN = basis.V, basis.N, basis.AN
    K = basis.Kbar[:d] if basis.Kbar.shape[1] == d else None
    use_pencil = basis.pencil_ok and K is not None and N.shape[1] > 0
    if use_pencil and np.linalg.cond(K) < 1e12:
        k_rows, h_rows = basis.Kbar[d:], basis.Hbar[d:]
        PAN = AN - V @ (V.T @ AN)
        PAN = PAN - V @ (V.T @ PAN)
        s = basis.shifts[-1]
        Kinv_k = np.linalg.solve(K.T, k_rows.T).T
        if s.imag == 0.0:
            g = s.real * N - PAN
            wt = Kinv_k
        else:
            g = np.hstack([N, -PAN])
            wt = np.vstack([np.linalg.solve(K.T, h_rows.T).T, Kinv_k])
        basis.boundary_source = "pencil"
    else:
        RA = basis.AV - V @ basis.T
        RA = RA - V @ (V.T @ RA)
        U, sv, Vh = np.linalg.svd(RA, full_matrices=False)
        t = int(np.sum(sv > 1e-14 * sv[0])) if sv.size and sv[0] > 0 else 0
        g = U[:, :t] * sv[:t]
        wt = Vh[:t]
        basis.boundary_source = "explicit"
    basis.g, basis.w = g, wt.T
    if g.shape[1]:
        basis.G, basis.Rg = np.linalg.qr(g)
    else:
        basis.G, basis.Rg = np.zeros((basis.n, 0)), np.zeros((0, 0))


# ------------------------------------------------------------------ shifts


def estimate_spectral_bounds(A, factor=None, iters: int = 20, seed: int = 0) -> tuple:
    """Crude ``(smallest, largest)`` eigenvalue moduli of ``A`` by power iteration.

    The smallest modulus uses inverse iteration through ``factor`` (a zero-shift
    factorization of ``A``; created if absent).
    """
    rng = np.random.default_rng(seed)
    n = A.n
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    big = 0.0
    for _ in range(iters):
        y = A.dot(x)
        big = np.linalg.norm(y)
        if big == 0.0:
            break
        x = y / big
    if factor is None:
        factor = factorize(A.matrix, 0.0)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    inv = 0.0
    for _ in range(iters):
        y = factor.solve(x)
        inv = np.linalg.norm(y)
        x = y / inv
    small = 1.0 / inv if inv > 0 else big
    return float(small), float(max(big, small))


def _hull_edges(points: np.ndarray) -> list:
    """Edges (a, b) of the convex hull of complex points; a segment if degenerate."""
    pts = np.unique(np.round(points, 14))
    scale = max(np.max(np.abs(pts)), 1.0)
    if np.all(np.abs(pts.imag) <= 1e-12 * scale):
        lo, hi = np.min(pts.real), np.max(pts.real)
        if hi - lo <= 1e-14 * scale:
            return [(complex(lo), complex(lo))]
        return [(complex(lo), complex(hi))]
    xy = np.column_stack([pts.real, pts.imag])
    try:
        hull = ConvexHull(xy)
    except QhullError:
        # collinear cloud: take the two extreme points along the main direction
        c = xy - xy.mean(axis=0)
        _, _, vt = np.linalg.svd(c, full_matrices=False)
        proj = c @ vt[0]
        a, b = pts[np.argmin(proj)], pts[np.argmax(proj)]
        return [(complex(a), complex(b))]
    verts = hull.vertices
    z = pts[verts]
    return [(complex(z[i]), complex(z[(i + 1) % len(z)])) for i in range(len(z))]


def _log_inv_r(s, ritz, poles):
    s = np.asarray(s, dtype=complex)
    num = np.zeros(s.shape)
    for p in poles:
        num += np.log(np.abs(s - p))
    den = np.zeros(s.shape)
    for lam in ritz:
        den += np.log(np.abs(s - lam))
    return num - den


def adaptive_shift(basis: Optional[KrylovBasis], closedloop_T: np.ndarray, pool: ShiftPool) -> complex:
    """Next pole maximizing ``1/|r_m(s)|`` on the boundary of the candidate hull.

    ``r_m(s) = prod_j (s - lambda_j) / prod_i (s - s_i)`` with ``lambda_j``
    the eigenvalues of ``closedloop_T`` and ``s_i`` the poles used so far.
    The hull is spanned by the mirrored eigenvalues ``-lambda_j`` and the
    start bounds with their conjugates.  Each edge is sampled densely and the
    best sample is refined by a bounded scalar search.
    """
    ritz = np.linalg.eigvals(np.asarray(closedloop_T, dtype=float)) if np.size(closedloop_T) else np.zeros(0)
    pts = np.concatenate([-ritz, pool.candidates()])
    if pts.size == 0:
        raise ShiftSelectionError("empty candidate set for the shift hull")
    poles = list(pool.used)
    if basis is not None:
        for s in basis.shifts:
            for u in (s, np.conj(s)):
                if not any(abs(u - p) == 0 for p in poles):
                    poles.append(u)
    edges = _hull_edges(pts)
    scale = max(np.max(np.abs(pts)), 1.0)
    nsamp = max(int(pool.samples_per_edge), 2)
    best_val, best = -np.inf, None
    for a, b in edges:
        if a == b:
            cand = np.array([a])
            vals = _log_inv_r(cand, ritz, poles)
            i = 0
            t_best, h = 0.0, 0.0
        else:
            t = np.linspace(0.0, 1.0, nsamp)
            cand = a + t * (b - a)
            with np.errstate(divide="ignore"):
                vals = _log_inv_r(cand, ritz, poles)
            vals[~np.isfinite(vals)] = -np.inf
            i = int(np.argmax(vals))
            t_best, h = t[i], 1.0 / (nsamp - 1)
        v = vals[i]
        s = cand[i]
        if h > 0 and np.isfinite(v):
            lo, hi = max(t_best - h, 0.0), min(t_best + h, 1.0)
            res = minimize_scalar(lambda tt: -float(_log_inv_r(np.array([a + tt * (b - a)]), ritz, poles)[0]),
                                  bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
            if res.success and -res.fun > v:
                v, s = -res.fun, a + res.x * (b - a)
        if v > best_val:
            best_val, best = v, s
    if best is None or not np.isfinite(best_val):
        raise ShiftSelectionError("all hull candidates coincide with poles")
    best = complex(best)
    if abs(best.imag) <= 1e-10 * scale:
        best = complex(best.real, 0.0)
    if any(abs(best - p) <= 1e-14 * max(abs(best), 1.0) for p in poles):
        raise ShiftSelectionError("selected shift coincides with a used pole")
    return best
