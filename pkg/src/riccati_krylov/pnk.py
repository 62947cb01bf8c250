"""Projected inexact Newton-Kleinman with exact line search on a shared Krylov space."""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .densekernels import solve_lyapunov_dense, spectral_abscissa
from .errors import ConfigError, LineSearchError, UnstableMatrixError
from .krylov import (
    DEFAULT_DEFL_TOL,
    KrylovBasis,
    ShiftPool,
    adaptive_shift,
    ek_expand,
    ek_init,
    estimate_spectral_bounds,
    rk_expand,
    rk_init,
)
from .lowrank import signed_factor, truncate_to_residual
from .sparsekernels import LowRankUpdatedOperator, as_operator, factorize

__all__ = [
    "LineSearchCoeffs",
    "PNKConfig",
    "SolveReport",
    "HistoryRow",
    "assemble_projected_lyapunov",
    "inner_residual_ek",
    "inner_residual_rk",
    "riccati_residual_norm",
    "line_search_coeffs_ek",
    "line_search_coeffs_rk",
    "quartic_value",
    "quartic_derivative",
    "minimize_quartic",
    "forcing_parameter",
    "stabilization_threshold",
    "pnk_solve",
]


@dataclass(frozen=True)
class LineSearchCoeffs:
    alpha: float
    beta: float
    gamma: float
    delta: float
    epsilon: float
    zeta: float = 0.0

    def poly(self) -> np.ndarray:
        """Coefficients of the quartic, highest degree first."""
        a, b, g, d, e, z = self.alpha, self.beta, self.gamma, self.delta, self.epsilon, self.zeta
        return np.array([d, 2 * e - 2 * z, a + b - 2 * g - 2 * e, 2 * g - 2 * a, a])


def quartic_value(c: LineSearchCoeffs, lam):
    lam = np.asarray(lam, dtype=float)
    return ((1 - lam) ** 2 * c.alpha + lam ** 2 * c.beta + lam ** 4 * c.delta
            + 2 * lam * (1 - lam) * c.gamma - 2 * lam ** 2 * (1 - lam) * c.epsilon
            - 2 * lam ** 3 * c.zeta)


def quartic_derivative(c: LineSearchCoeffs, lam):
    return np.polyval(np.polyder(c.poly()), lam)


def minimize_quartic(c: LineSearchCoeffs, *, grid: int = 2001) -> float:
    """Minimizer of the residual quartic over ``(0, 2]``.

    Candidates are the real roots of the cubic derivative inside ``(0, 2]``
    and the endpoint 2.  A coarse grid guards against ill-conditioned roots.
    """
    if not c.alpha > 0:
        raise LineSearchError("alpha must be positive; the iterate is already a solution")
    if quartic_derivative(c, 0.0) >= 0:
        raise LineSearchError("the Newton direction is not a descent direction (p'(0) >= 0)")
    dcoef = np.polyder(c.poly())
    # negligible leading terms only push roots far outside (0, 2]
    nz = np.flatnonzero(np.abs(dcoef) > 1e-14 * np.abs(dcoef).max())
    try:
        roots = np.roots(dcoef[nz[0]:]) if nz.size else np.array([])
    except np.linalg.LinAlgError:
        roots = np.array([])
    tol = 1e-10
    cands = [float(r.real) for r in roots
             if abs(r.imag) <= tol * max(1.0, abs(r)) and 0.0 < r.real <= 2.0]
    cands.append(2.0)
    vals = [float(quartic_value(c, lam)) for lam in cands]
    lam = cands[int(np.argmin(vals))]
    best = min(vals)
    ts = np.linspace(0.0, 2.0, grid)[1:]
    gv = quartic_value(c, ts)
    i = int(np.argmin(gv))
    if gv[i] < best - 1e-12 * abs(c.alpha):
        from scipy.optimize import minimize_scalar

        lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, len(ts) - 1)]
        res = minimize_scalar(lambda t: float(quartic_value(c, t)), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-14})
        lam = float(res.x)
        best = float(res.fun)
    if not best < c.alpha:
        raise LineSearchError("no descent value of the quartic in (0, 2]")
    return lam


def forcing_parameter(k: int, mode: str = "superlinear", prev_res: Optional[float] = None,
                      eta_bar: float = 0.9) -> float:
    """Forcing value ``eta_k`` for the inner Lyapunov tolerance."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    if mode == "superlinear":
        return min(eta_bar, 1.0 / (k ** 3 + 1))
    if mode == "quadratic":
        if prev_res is None:
            raise ValueError("quadratic forcing needs the previous residual")
        return min(0.1, 0.9 * prev_res)
    raise ValueError(f"unknown forcing mode {mode!r}")


def stabilization_threshold(B, C, mode: str = "kernel") -> float:
    """Squared smallest singular value of ``C`` (kernel mode) or ``B`` (definite mode)."""
    if mode == "kernel":
        M = np.atleast_2d(np.asarray(C, dtype=float))
    elif mode == "definite":
        M = np.atleast_2d(np.asarray(B, dtype=float))
    else:
        raise ValueError(f"unknown stabilization mode {mode!r}")
    s = np.linalg.svd(M, compute_uv=False)
    smin = float(s.min()) if s.size else 0.0
    if smin <= np.finfo(float).eps * (s.max() if s.size else 0.0) * max(M.shape):
        warnings.warn("smallest singular value is zero; the stabilization guarantee is vacuous",
                      RuntimeWarning, stacklevel=2)
        return 0.0
    return smin ** 2


# ------------------------------------------------------------------ projected quantities


def _pad(Y: np.ndarray, d: int) -> np.ndarray:
    if Y.shape[0] == d:
        return Y
    out = np.zeros((d, d))
    out[: Y.shape[0], : Y.shape[0]] = Y
    return out


def assemble_projected_lyapunov(T, B_m, Y_k, gamma):
    """Closed-loop projected matrix and right-hand side.

    ``Q = T - diag(Y_k, 0) B_m B_m^T`` and
    ``RHS = -diag(Y_k, 0) B_m B_m^T diag(Y_k, 0) - E_1 gamma gamma^T E_1^T``;
    the projected Newton equation is ``Q Y + Y Q^T = RHS``.
    """
    d = T.shape[0]
    Yp = _pad(np.asarray(Y_k, dtype=float), d)
    g = np.zeros((d, gamma.shape[1]))
    g[: gamma.shape[0]] = gamma
    YB = Yp @ B_m
    Q = T - YB @ B_m.T
    RHS = -(YB @ YB.T) - g @ g.T
    return Q, RHS


def inner_residual_ek(Ytilde, Tbar, r: int) -> float:
    """``sqrt(2) * ||Ytilde Tbar^T E_{m+1}||_F`` with ``E_{m+1}`` the last ``r`` rows."""
    if r == 0:
        return 0.0
    S = Tbar[Tbar.shape[0] - r:, :]
    return float(np.sqrt(2.0) * np.linalg.norm(Ytilde @ S.T, "fro"))


def _fjf(Ra, Rg):
    """``F J F^T`` for ``F = blockdiag(Ra, Rg)`` and the swap matrix ``J``."""
    top = Ra @ Rg.T
    ka, kg = Ra.shape[0], Rg.shape[0]
    return np.block([[np.zeros((ka, ka)), top], [top.T, np.zeros((kg, kg))]])


def _u_factors(Y, basis):
    """QR data of ``U = [V Y w, g]``: ``U = [V Qa, G] blockdiag(Ra, Rg)``."""
    Yw = Y @ basis.w[: Y.shape[0]]
    Qa, Ra = np.linalg.qr(Yw)
    return Qa, Ra, basis.G, basis.Rg


def inner_residual_rk(Ytilde, basis: KrylovBasis) -> float:
    """Residual norm ``||F J F^T||_F`` from the skinny QR of ``U``.

    ``U = [V Ytilde w, g]`` where ``g w^T = (I - V V^T) A V`` is the low-rank
    boundary of the rational relation.  Since ``g`` is orthogonal to ``V``
    the QR factor of ``U`` is block diagonal and only small matrices are
    factored.
    """
    if basis.g is None or basis.g.shape[1] == 0:
        return 0.0
    _, Ra, _, Rg = _u_factors(Ytilde, basis)
    return float(np.linalg.norm(_fjf(Ra, Rg), "fro"))


def _projected_riccati_residual(Y, T, B_m, gamma):
    d = T.shape[0]
    g = np.zeros((d, gamma.shape[1]))
    g[: gamma.shape[0]] = gamma
    YB = Y @ B_m
    TY = T @ Y
    return TY + TY.T - YB @ YB.T + g @ g.T


def riccati_residual_norm(Y, T, B_m, gamma, basis: KrylovBasis) -> float:
    """``||R(V Y V^T)||_F`` from projected quantities and the basis boundary."""
    P = _projected_riccati_residual(Y, T, B_m, gamma)
    if basis.kind == "extended":
        bnd = inner_residual_ek(Y, basis.Tbar, basis.pending_size)
    else:
        bnd = inner_residual_rk(Y, basis)
    return float(np.sqrt(np.linalg.norm(P, "fro") ** 2 + bnd ** 2))


# ------------------------------------------------------------------ line search


@dataclass
class _Accepted:
    """Cached data of the last accepted iterate ``X_k = V_k Y_k V_k^T``."""

    Y: np.ndarray
    dim: int
    P: np.ndarray
    res: float
    S: Optional[np.ndarray] = None
    G: Optional[np.ndarray] = None
    Rg: Optional[np.ndarray] = None
    w: Optional[np.ndarray] = None

    @classmethod
    def capture(cls, basis: KrylovBasis, Y, res):
        P = _projected_riccati_residual(Y, basis.T, basis.B_proj, basis.gamma)
        acc = cls(Y=Y.copy(), dim=Y.shape[0], P=P, res=res)
        if basis.kind == "extended":
            acc.S = basis.S.copy()
        elif basis.g is not None:
            acc.G, acc.Rg, acc.w = basis.G.copy(), basis.Rg.copy(), basis.w.copy()
        return acc


def _common_terms(state: _Accepted, Ytilde, basis):
    d = Ytilde.shape[0]
    Delta = Ytilde - _pad(state.Y, d)
    DB = Delta @ basis.B_proj
    M = DB @ DB.T
    return M


def line_search_coeffs_ek(state: _Accepted, Ytilde, basis: KrylovBasis, inner: Optional[float] = None) -> LineSearchCoeffs:
    """Quartic coefficients for the extended space from projected data only."""
    d, dk = Ytilde.shape[0], state.dim
    M = _common_terms(state, Ytilde, basis)
    alpha = state.res ** 2
    if inner is None:
        inner = inner_residual_ek(Ytilde, basis.Tbar, basis.pending_size)
    beta = inner ** 2
    delta = float(np.linalg.norm(M, "fro") ** 2)
    eps = float(np.sum(state.P * M[:dk, :dk]))
    if d > dk:
        r = state.S.shape[0]
        SY = state.S @ state.Y
        # E E^T Tbar_k [Y_k, 0] + its transpose, restricted to the first dk + r rows
        W = np.zeros((dk + r, dk + r))
        W[dk:, :dk] = SY
        W[:dk, dk:] = SY.T
        eps += float(np.sum(W * M[: dk + r, : dk + r]))
        gamma = 0.0
    else:
        S = basis.S
        gamma = 2.0 * float(np.sum((S @ state.Y) * (S @ Ytilde)))
    return LineSearchCoeffs(alpha=alpha, beta=beta, gamma=gamma, delta=delta, epsilon=eps, zeta=0.0)


def line_search_coeffs_rk(state: _Accepted, Ytilde, basis: KrylovBasis, inner: Optional[float] = None) -> LineSearchCoeffs:
    """Quartic coefficients for the rational space.

    The boundary terms are expressed through ``F J F^T`` for the current and
    the cached ``U`` factors together with the coupling ``G_k^T [V, G]`` of
    the orthonormal bases; only ``n``-by-small inner products are formed.
    """
    d, dk = Ytilde.shape[0], state.dim
    M = _common_terms(state, Ytilde, basis)
    alpha = state.res ** 2
    if inner is None:
        inner = inner_residual_rk(Ytilde, basis)
    beta = inner ** 2
    delta = float(np.linalg.norm(M, "fro") ** 2)
    eps = float(np.sum(state.P * M[:dk, :dk]))
    gamma = 0.0
    if state.G is not None and state.G.shape[1]:
        Qa_k, Ra_k = np.linalg.qr(state.Y @ state.w)
        FJF_k = _fjf(Ra_k, state.Rg)
        GkV = state.G.T @ basis.V
        Phi = np.vstack([np.hstack([Qa_k.T, np.zeros((Qa_k.shape[1], d - dk))]), GkV])
        eps += float(np.sum(FJF_k * (Phi @ M @ Phi.T)))
        if basis.g is not None and basis.g.shape[1]:
            Qa, Ra, G, Rg = _u_factors(Ytilde, basis)
            FJF = _fjf(Ra, Rg)
            Omega = np.block([
                [Qa_k.T @ Qa[:dk], np.zeros((Qa_k.shape[1], G.shape[1]))],
                [GkV @ Qa, state.G.T @ G],
            ])
            gamma = float(np.sum(FJF_k * (Omega @ FJF @ Omega.T)))
    return LineSearchCoeffs(alpha=alpha, beta=beta, gamma=gamma, delta=delta, epsilon=eps, zeta=0.0)


# ------------------------------------------------------------------ driver


@dataclass
class PNKConfig:
    """Options of :func:`pnk_solve`.

    ``stop_rule`` is ``"care"`` (relative to ``||C^T C||_F``) or
    ``"initial"`` (relative to ``||R(X_0)||_F``).  ``trunc_tol`` defaults to
    ``eps / 10``.
    """

    kind: str = "extended"
    eps: float = 1e-8
    eta_mode: str = "superlinear"
    eta_bar: float = 0.9
    alpha: float = 0.01
    d: int = 1
    m_max: int = 300
    defl_tol: float = DEFAULT_DEFL_TOL
    trunc_tol: Optional[float] = None
    stab_mode: Optional[str] = None
    s0: Optional[tuple] = None
    stop_rule: str = "care"
    samples_per_edge: int = 2000
    keep_iterates: bool = False
    monitor: Optional[Callable[[dict], None]] = None

    def validate(self):
        if self.kind not in ("extended", "rational"):
            raise ConfigError(f"kind must be 'extended' or 'rational', got {self.kind!r}")
        if not 0 < self.eps < 1:
            raise ConfigError("eps must lie in (0, 1)")
        if not 0 < self.eta_bar < 1:
            raise ConfigError("eta_bar must lie in (0, 1)")
        if not 0 < self.alpha < 1 - self.eta_bar:
            raise ConfigError("alpha must lie in (0, 1 - eta_bar)")
        if self.d < 1 or self.m_max < 1:
            raise ConfigError("d and m_max must be positive")
        if self.stab_mode not in (None, "kernel", "definite"):
            raise ConfigError(f"unknown stab_mode {self.stab_mode!r}")
        if self.stop_rule not in ("care", "initial"):
            raise ConfigError(f"unknown stop_rule {self.stop_rule!r}")
        return self


@dataclass
class HistoryRow:
    m: int
    k: int
    rel_res: float
    inner_res: float
    eta: float
    lam: float


@dataclass
class SolveReport:
    method: str
    converged: bool = False
    newton_steps: int = 0
    inner_iterations: int = 0
    basis_dim: int = 0
    memory_vectors: int = 0
    rank: int = 0
    rel_res: float = 0.0
    factor_rel_res: float = float("nan")
    seconds: float = 0.0
    history: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    dims: list = field(default_factory=list)
    memory: list = field(default_factory=list)
    coeffs: list = field(default_factory=list)
    sufficient_decrease: list = field(default_factory=list)
    projected_abscissa: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    deflation_log: list = field(default_factory=list)
    shifts: list = field(default_factory=list)
    message: str = ""


def _as_inputs(A, B, C):
    A = as_operator(A)
    n = A.n
    B = np.asarray(B, dtype=float).reshape(n, -1)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape[1] != n:
        raise ConfigError(f"C must have {n} columns, got shape {C.shape}")
    return A, n, B, C


def pnk_solve(A, B, C, X0factor=None, cfg: Optional[PNKConfig] = None):
    """Solve ``A X + X A^T - X B B^T X + C^T C = 0`` by projected inexact Newton.

    All Newton steps share one growing extended or rational Krylov space
    started from ``C^T`` (or ``[C^T, S_0]`` for ``X_0 = S_0 S_0^T``).  Each
    Newton step is an inexact Galerkin solve of the closed-loop Lyapunov
    equation, followed by an exact line search.

    Parameters
    ----------
    A : sparse or dense (n, n) matrix; negative definite unless ``X0factor``
        is stabilizing
    B : (n, p) array
    C : (q, n) array
    X0factor : (n, s) array, optional
    cfg : PNKConfig

    Returns
    -------
    P : (n, r) array with ``X ~ P P^T``
    report : SolveReport
    """
    cfg = (cfg or PNKConfig()).validate()
    t0 = time.perf_counter()
    A, n, B, C = _as_inputs(A, B, C)
    q = C.shape[0]
    method = "pnk_ek" if cfg.kind == "extended" else "pnk_rk"
    report = SolveReport(method=method)
    trunc_tol = cfg.trunc_tol if cfg.trunc_tol is not None else cfg.eps / 10
    if not np.any(C):
        if X0factor is not None and np.any(X0factor):
            raise ConfigError("C = 0 with a nonzero X0 is not supported")
        report.converged = True
        report.seconds = time.perf_counter() - t0
        report.message = "C = 0: zero solution"
        return np.zeros((n, 0)), report
    start = C.T if X0factor is None else np.hstack([C.T, np.asarray(X0factor, dtype=float).reshape(n, -1)])
    notify = cfg.monitor or (lambda ev: None)

    factor0 = None
    if cfg.kind == "extended":
        factor0 = factorize(A, 0.0)
        basis = ek_init(A, factor0, start, B=B, defl_tol=cfg.defl_tol)
        pool = None
    else:
        if cfg.s0 is not None:
            s0 = tuple(complex(s) for s in cfg.s0)
        else:
            factor0 = factorize(A, 0.0)
            if X0factor is None:
                s0 = estimate_spectral_bounds(A, factor0)
            else:
                S0 = np.asarray(X0factor, dtype=float).reshape(n, -1)
                cl = LowRankUpdatedOperator(factor0, S0 @ (S0.T @ B), B.T)
                s0 = estimate_spectral_bounds(cl, cl)
        pool = ShiftPool(s0=s0, samples_per_edge=cfg.samples_per_edge)
        basis = rk_init(A, start, pool, B=B, defl_tol=cfg.defl_tol)

    coeffs_fn = line_search_coeffs_ek if cfg.kind == "extended" else line_search_coeffs_rk
    gamma = basis.start_coeffs[:, :q]
    basis.gamma = gamma
    if X0factor is None:
        Y = np.zeros((basis.dim, basis.dim))
    else:
        R0 = basis.start_coeffs[:, q:]
        Y = R0 @ R0.T
    y_zero = not np.any(Y)
    scale = float(np.linalg.norm(gamma.T @ gamma, "fro"))
    stab_thr = stabilization_threshold(B, C, cfg.stab_mode) if cfg.stab_mode else np.inf

    def closed_loop_shift(bs: KrylovBasis) -> complex:
        Q, _ = assemble_projected_lyapunov(bs.T, bs.B_proj, Y, gamma)
        return adaptive_shift(bs, Q, pool)

    state: Optional[_Accepted] = None
    res0 = None
    k = 0
    eta = forcing_parameter(0, cfg.eta_mode, 1.0, cfg.eta_bar)
    m = 1
    if cfg.keep_iterates:
        report.iterates.append(signed_factor(basis.V[:, : Y.shape[0]], Y, trunc_tol))
    while True:
        if (m > 1 or cfg.kind == "rational") and not basis.invariant:
            if cfg.kind == "extended":
                ek_expand(basis)
            else:
                rk_expand(basis, closed_loop_shift)
        if state is None:
            # residual of X_0 needs the boundary, available after the first expansion
            res = riccati_residual_norm(Y, basis.T, basis.B_proj, gamma, basis) if not y_zero else scale
            state = _Accepted.capture(basis, Y, res)
            res0 = res
            report.residuals.append(res)
            report.dims.append(basis.dim)
            report.memory.append(basis.memory_vectors)
            stop_level = cfg.eps * (scale if cfg.stop_rule == "care" else res0)
            if res < stop_level:
                report.converged = True
                break
            if cfg.eta_mode == "quadratic":
                eta = forcing_parameter(0, "quadratic", res / scale, cfg.eta_bar)
        lam = np.nan
        inner = np.nan
        accept = grew = False
        thr = np.inf
        if (m - 1) % cfg.d == 0 or basis.invariant:
            Q, RHS = assemble_projected_lyapunov(basis.T, basis.B_proj, Y, gamma)
            qa = spectral_abscissa(Q)
            report.projected_abscissa.append((k, m, qa))
            try:
                Yt = solve_lyapunov_dense(Q, -RHS)
            except UnstableMatrixError as exc:
                exc.context.update({"newton_step": k, "iteration": m, "dim": basis.dim})
                raise UnstableMatrixError(
                    f"projected closed-loop matrix unstable at Newton step {k}, iteration {m}: {exc}",
                    eigenvalue=exc.eigenvalue, context=exc.context) from exc
            if cfg.kind == "extended":
                inner = inner_residual_ek(Yt, basis.Tbar, basis.pending_size)
            else:
                inner = inner_residual_rk(Yt, basis)
            thr = min(eta * state.res, stab_thr)
            grew = basis.dim > state.dim
            accept = inner <= thr
            notify({"event": "inner", "k": k, "m": m, "basis": basis, "Ytilde": Yt, "state": state,
                    "inner": inner, "threshold": thr, "accept": accept})
            if accept and not grew and not basis.invariant and not (k == 0 and y_zero):
                accept = False
            if accept:
                c = coeffs_fn(state, Yt, basis, inner)
                lam = minimize_quartic(c)
                Ynew = (1 - lam) * _pad(Y, basis.dim) + lam * Yt
                Ynew = 0.5 * (Ynew + Ynew.T)
                res_new = riccati_residual_norm(Ynew, basis.T, basis.B_proj, gamma, basis)
                notify({"event": "accept", "k": k, "m": m, "basis": basis, "Ytilde": Yt, "state": state,
                        "coeffs": c, "lam": lam, "Ynew": Ynew, "res_new": res_new, "grew": grew})
                report.coeffs.append(c)
                report.lambdas.append(lam)
                report.sufficient_decrease.append(bool(res_new <= (1 - lam * cfg.alpha) * state.res))
                Y = Ynew
                k += 1
                state = _Accepted.capture(basis, Y, res_new)
                report.residuals.append(res_new)
                report.dims.append(basis.dim)
                report.memory.append(basis.memory_vectors)
                if cfg.keep_iterates:
                    report.iterates.append(signed_factor(basis.V, Y, trunc_tol))
                if res_new < stop_level:
                    report.converged = True
                    report.history.append(HistoryRow(m, k, res_new / scale, inner / scale, eta, lam))
                    break
                eta = forcing_parameter(k, cfg.eta_mode, res_new / scale, cfg.eta_bar)
            report.history.append(HistoryRow(m, k, state.res / scale, inner / scale, eta, lam))
        if m >= cfg.m_max:
            report.message = f"m_max = {cfg.m_max} reached without convergence"
            break
        if basis.invariant and not accept and not grew and state.dim == basis.dim and k > 0 and inner > thr:
            report.message = "invariant subspace reached without convergence"
            break
        m += 1

    target = stop_level if report.converged else max(stop_level, 2.0 * state.res)
    P, fres, _ = truncate_to_residual(A, B, C, basis.V[:, : Y.shape[0]], Y, trunc_tol, target)
    report.factor_rel_res = fres / scale
    report.newton_steps = k
    report.inner_iterations = m
    report.basis_dim = basis.dim
    report.memory_vectors = basis.memory_vectors
    report.rank = P.shape[1]
    report.rel_res = state.res / scale
    report.deflation_log = list(basis.deflation_log)
    report.shifts = list(basis.shifts)
    report.seconds = time.perf_counter() - t0
    report.basis = basis
    report.final_Y = Y
    return P, report
