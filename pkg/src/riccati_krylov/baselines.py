"""Comparison solvers: pure Galerkin projection, fresh-space inexact Newton, dense Newton."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .densekernels import (
    dense_newton_kleinman,
    solve_lyapunov_dense,
    solve_riccati_dense,
)
from .errors import ConfigError
from .krylov import ShiftPool, adaptive_shift, ek_expand, ek_init, estimate_spectral_bounds, rk_expand, rk_init
from .lowrank import LowRankSym, lowrank_gram, riccati_residual_lowrank, signed_factor, truncate_to_residual
from .pnk import (
    HistoryRow,
    LineSearchCoeffs,
    PNKConfig,
    SolveReport,
    _as_inputs,
    forcing_parameter,
    inner_residual_ek,
    minimize_quartic,
    riccati_residual_norm,
)
from .sparsekernels import LowRankUpdatedOperator, factorize

__all__ = [
    "BaselineReport",
    "galerkin_riccati_solve",
    "inexact_newton_fresh",
    "dense_newton_oracle",
]


_ROUNDING_TOL = 1e-14
_MAX_NEWTON = 100


@dataclass
class BaselineReport(SolveReport):
    fresh_dims: list = field(default_factory=list)
    fresh_iterations: list = field(default_factory=list)
    fresh_memory: list = field(default_factory=list)


def _compress_sym(W, M, tol):
    """Orthonormal ``Q`` and symmetric ``D`` with ``Q D Q^T ~ W M W^T``.

    Eigenvalues below ``tol`` times the largest magnitude are dropped; small
    negative ones are kept since an iterate after a step longer than one need
    not be semidefinite.
    """
    if W.shape[1] == 0:
        return W, np.zeros((0, 0))
    Qw, R = np.linalg.qr(W)
    return signed_factor(Qw, R @ M @ R.T, tol)


def galerkin_riccati_solve(A, B, C, kind: str = "extended", cfg: Optional[PNKConfig] = None):
    """Galerkin projection of the Riccati equation onto a growing Krylov space.

    Every iteration solves the projected Riccati equation densely; the full
    residual norm follows from the basis boundary since the projected residual
    vanishes.
    """
    cfg = replace(cfg or PNKConfig(), kind=kind, monitor=None).validate()
    t0 = time.perf_counter()
    A, n, B, C = _as_inputs(A, B, C)
    report = SolveReport(method="eksm" if kind == "extended" else "rksm")
    trunc_tol = cfg.trunc_tol if cfg.trunc_tol is not None else cfg.eps / 10
    if not np.any(C):
        report.converged = True
        report.message = "C = 0: zero solution"
        report.seconds = time.perf_counter() - t0
        return np.zeros((n, 0)), report
    if kind == "extended":
        basis = ek_init(A, factorize(A, 0.0), C.T, B=B, defl_tol=cfg.defl_tol)
    else:
        s0 = tuple(cfg.s0) if cfg.s0 is not None else estimate_spectral_bounds(A)
        pool = ShiftPool(s0=s0, samples_per_edge=cfg.samples_per_edge)
        basis = rk_init(A, C.T, pool, B=B, defl_tol=cfg.defl_tol)
    gamma = basis.gamma
    scale = float(np.linalg.norm(gamma.T @ gamma, "fro"))
    Y = np.zeros((basis.dim, basis.dim))

    def shift(bs):
        Yp = np.zeros((bs.dim, bs.dim))
        Yp[: Y.shape[0], : Y.shape[0]] = Y
        return adaptive_shift(bs, bs.T - Yp @ bs.B_proj @ bs.B_proj.T, pool)

    m = 1
    res = scale
    while True:
        if (m > 1 or kind == "rational") and not basis.invariant:
            if kind == "extended":
                ek_expand(basis)
            else:
                rk_expand(basis, shift)
        H = basis.gamma_full().T
        Y = solve_riccati_dense(basis.T, basis.B_proj, H)
        res = riccati_residual_norm(Y, basis.T, basis.B_proj, gamma, basis)
        report.history.append(HistoryRow(m, 0, res / scale, np.nan, np.nan, np.nan))
        report.residuals.append(res)
        report.dims.append(basis.dim)
        if res < cfg.eps * scale:
            report.converged = True
            break
        if m >= cfg.m_max:
            report.message = f"m_max = {cfg.m_max} reached without convergence"
            break
        if basis.invariant:
            report.message = "invariant subspace reached without convergence"
            break
        m += 1
    target = cfg.eps * scale if report.converged else max(cfg.eps * scale, 2.0 * res)
    P, fres, _ = truncate_to_residual(A, B, C, basis.V, Y, trunc_tol, target)
    report.factor_rel_res = fres / scale
    report.inner_iterations = m
    report.basis_dim = basis.dim
    report.memory_vectors = basis.memory_vectors
    report.rank = P.shape[1]
    report.rel_res = res / scale
    report.deflation_log = list(basis.deflation_log)
    report.shifts = list(basis.shifts)
    report.seconds = time.perf_counter() - t0
    report.basis = basis
    return P, report


def inexact_newton_fresh(A, B, C, cfg: Optional[PNKConfig] = None, X0factor=None):
    """Inexact Newton-Kleinman with a new extended Krylov space per step.

    Step ``k`` solves the closed-loop Lyapunov equation on
    ``EK_m(A - X_k B B^T, [C^T, X_k B])``; solves with the closed-loop matrix
    use the Sherman-Morrison-Woodbury formula on a single factorization of
    ``A``.  The line-search quartic is assembled from low-rank factors of the
    full-size residuals.
    """
    cfg = (cfg or PNKConfig()).validate()
    t0 = time.perf_counter()
    A, n, B, C = _as_inputs(A, B, C)
    report = BaselineReport(method="ink_fresh")
    trunc_tol = cfg.trunc_tol if cfg.trunc_tol is not None else cfg.eps / 10
    scale = float(np.linalg.norm(C @ C.T, "fro"))
    if scale == 0.0:
        report.converged = True
        report.message = "C = 0: zero solution"
        report.seconds = time.perf_counter() - t0
        return np.zeros((n, 0)), report
    F0 = factorize(A, 0.0)
    if X0factor is None:
        Q, D = np.zeros((n, 0)), np.zeros((0, 0))
    else:
        S0 = np.asarray(X0factor, dtype=float).reshape(n, -1)
        Q, D = _compress_sym(S0, np.eye(S0.shape[1]), _ROUNDING_TOL)
    Rk = riccati_residual_lowrank(A, B, C, Q, D)
    res = Rk.norm()
    res0 = res
    if cfg.keep_iterates:
        report.iterates.append((Q.copy(), D.copy()))
    report.residuals.append(res)
    stop_level = cfg.eps * (scale if cfg.stop_rule == "care" else res0)
    k = 0
    eta = forcing_parameter(0, cfg.eta_mode, res / scale, cfg.eta_bar)
    total_m = 0
    stalls = 0
    while res >= stop_level:
        U = Q @ (D @ (Q.T @ B))
        Ak = LowRankUpdatedOperator(F0, U, B.T)
        start = np.hstack([C.T, U]) if U.shape[1] else C.T
        basis = ek_init(Ak, Ak, start, defl_tol=cfg.defl_tol)
        g = basis.start_coeffs
        m = 1
        while True:
            if m > 1:
                ek_expand(basis)
            gf = np.zeros((basis.dim, g.shape[1]))
            gf[: g.shape[0]] = g
            Yt = solve_lyapunov_dense(basis.T, gf @ gf.T)
            inner = inner_residual_ek(Yt, basis.Tbar, basis.pending_size)
            total_m += 1
            report.history.append(HistoryRow(total_m, k, res / scale, inner / scale, eta, np.nan))
            if inner <= eta * res or basis.invariant:
                break
            if m >= cfg.m_max:
                report.message = f"inner m_max = {cfg.m_max} reached at Newton step {k}"
                break
            m += 1
        if report.message:
            break
        report.fresh_dims.append(basis.dim)
        report.fresh_iterations.append(m)
        report.fresh_memory.append(basis.memory_vectors)
        V = basis.V
        d = V.shape[1]
        # the Lyapunov residual lives on [V, N]: its projection onto V vanishes
        YS = Yt @ basis.S.T
        r_p = YS.shape[1]
        Lm = np.zeros((d + r_p, d + r_p))
        Lm[:d, d:] = YS
        Lm[d:, :d] = YS.T
        L = LowRankSym(np.hstack([V, basis.N]), Lm)
        ZB = V @ (Yt @ (V.T @ B)) - U
        W = LowRankSym(ZB, np.eye(ZB.shape[1]))
        G = lowrank_gram(Rk, L, W)
        c = LineSearchCoeffs(alpha=res ** 2, beta=G[1, 1], gamma=G[0, 1], delta=G[2, 2],
                             epsilon=G[0, 2], zeta=G[1, 2])
        lam = minimize_quartic(c)
        report.coeffs.append(c)
        report.lambdas.append(lam)
        r = Q.shape[1]
        Msmall = np.zeros((r + d, r + d))
        Msmall[:r, :r] = (1 - lam) * D
        Msmall[r:, r:] = lam * Yt
        # intermediate iterates are only cleaned of rounding-level directions;
        # truncating at trunc_tol here would put a floor under the residual
        Q, D = _compress_sym(np.hstack([Q, V]), Msmall, _ROUNDING_TOL)
        Rk = riccati_residual_lowrank(A, B, C, Q, D)
        new_res = Rk.norm()
        report.sufficient_decrease.append(bool(new_res <= (1 - lam * cfg.alpha) * res))
        stalls = stalls + 1 if new_res >= res else 0
        res = new_res
        k += 1
        report.residuals.append(res)
        report.history[-1].lam = lam
        if cfg.keep_iterates:
            report.iterates.append((Q.copy(), D.copy()))
        eta = forcing_parameter(k, cfg.eta_mode, res / scale, cfg.eta_bar)
        if stalls >= 3 or k >= _MAX_NEWTON:
            report.message = f"Newton iteration stagnated at relative residual {res / scale:.3e}"
            break
    report.converged = res < stop_level
    target = stop_level if report.converged else max(stop_level, 2.0 * res)
    P, fres, _ = truncate_to_residual(A, B, C, Q, D, trunc_tol, target)
    report.factor_rel_res = fres / scale
    report.newton_steps = k
    report.inner_iterations = total_m
    report.basis_dim = max(report.fresh_dims, default=0)
    report.memory_vectors = max(report.fresh_memory, default=0)
    report.rank = P.shape[1]
    report.rel_res = res / scale
    report.dims = list(report.fresh_dims)
    report.seconds = time.perf_counter() - t0
    return P, report


def dense_newton_oracle(A_dense, B, C, X0=None, *, return_iterates: bool = False):
    """Exact dense Newton-Kleinman to ``||R(X)||_F <= 1e-12 ||C^T C||_F``."""
    A_dense = np.asarray(A_dense.toarray() if hasattr(A_dense, "toarray") else A_dense, dtype=float)
    n = A_dense.shape[0]
    if n > 500:
        raise ConfigError(f"dense Newton oracle is limited to n <= 500, got {n}")
    X, iterates = dense_newton_kleinman(A_dense, np.asarray(B, float).reshape(n, -1),
                                        np.atleast_2d(np.asarray(C, float)), X0, tol=1e-12)
    return (X, iterates) if return_iterates else X
