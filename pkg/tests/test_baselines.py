import numpy as np
import pytest
import scipy.sparse as sp

from riccati_krylov.baselines import dense_newton_oracle, galerkin_riccati_solve, inexact_newton_fresh
from riccati_krylov.densekernels import solve_lyapunov_dense, solve_riccati_dense
from riccati_krylov.errors import ConfigError
from riccati_krylov.pnk import PNKConfig, pnk_solve

from _problems import riccati_residual, sparse_care


def _rel(X, Xref):
    return np.linalg.norm(X - Xref) / np.linalg.norm(Xref)


# --- Galerkin projection


def test_galerkin_zero_input_is_lyapunov_solution():
    A, B, C = sparse_care(60, 1, 1, 0)
    B0 = np.zeros_like(B)
    P, rep = galerkin_riccati_solve(A, B0, C, cfg=PNKConfig(eps=1e-10))
    X = solve_lyapunov_dense(A.toarray(), C.T @ C)
    assert rep.converged
    assert _rel(P @ P.T, X) <= 1e-7


@pytest.mark.parametrize("kind", ["extended", "rational"])
def test_galerkin_matches_dense(kind):
    A, B, C = sparse_care(100, 1, 2, 1)
    X = solve_riccati_dense(A.toarray(), B, C)
    P, rep = galerkin_riccati_solve(A, B, C, kind, PNKConfig(eps=1e-10))
    assert rep.converged and rep.method == ("eksm" if kind == "extended" else "rksm")
    assert _rel(P @ P.T, X) <= 1e-6
    # the reported residual is the true residual of the projected solution
    Y = rep.basis.V.T @ X @ rep.basis.V
    R = riccati_residual(A.toarray(), B, C, P @ P.T)
    assert np.linalg.norm(R) <= 1e-10 * np.linalg.norm(C.T @ C)
    assert Y.shape[0] == rep.basis_dim


def test_galerkin_zero_c():
    A, B, _ = sparse_care(20, 1, 1, 2)
    P, rep = galerkin_riccati_solve(A, B, np.zeros((1, 20)))
    assert P.shape == (20, 0) and rep.converged


def test_galerkin_m_max_flagged():
    A, B, C = sparse_care(80, 1, 1, 3)
    _, rep = galerkin_riccati_solve(A, B, C, cfg=PNKConfig(eps=1e-12, m_max=2))
    assert not rep.converged and "m_max" in rep.message


# --- Newton with fresh spaces


def test_fresh_matches_dense():
    A, B, C = sparse_care(100, 1, 1, 4)
    X = solve_riccati_dense(A.toarray(), B, C)
    P, rep = inexact_newton_fresh(A, B, C, PNKConfig(eps=1e-10))
    assert rep.converged and rep.method == "ink_fresh"
    assert _rel(P @ P.T, X) <= 1e-6
    assert rep.factor_rel_res <= 1e-10
    assert len(rep.fresh_dims) == rep.newton_steps


def test_fresh_first_step_equals_shared_first_step():
    A, B, C = sparse_care(80, 1, 1, 5)
    cfg = PNKConfig(eps=1e-10, keep_iterates=True)
    _, rf = inexact_newton_fresh(A, B, C, cfg)
    _, rs = pnk_solve(A, B, C, cfg=cfg)
    assert rf.lambdas[0] == pytest.approx(rs.lambdas[0], rel=1e-8)
    assert rf.residuals[1] == pytest.approx(rs.residuals[1], rel=1e-8)
    Qf, Df = rf.iterates[1]
    Qs, Ds = rs.iterates[1]
    X1f, X1s = Qf @ Df @ Qf.T, Qs @ Ds @ Qs.T
    assert _rel(X1f, X1s) <= 1e-8


def test_fresh_zero_c_and_initial_guess():
    A, B, C = sparse_care(40, 1, 1, 6)
    P, rep = inexact_newton_fresh(A, B, np.zeros((1, 40)))
    assert P.shape == (40, 0) and rep.converged
    X = solve_riccati_dense(A.toarray(), B, C)
    w, E = np.linalg.eigh(X)
    P, rep = inexact_newton_fresh(A, B, C, PNKConfig(eps=1e-10), X0factor=E[:, -1:] * np.sqrt(w[-1]))
    assert rep.converged and _rel(P @ P.T, X) <= 1e-6


def test_shared_space_final_memory_is_economical():
    from riccati_krylov.bench import build_problem

    A, B, C = build_problem({"type": "laplacian3d", "n0": 10}, 0)
    cfg = PNKConfig(eps=1e-8)
    _, rs = pnk_solve(A, B, C, cfg=cfg)
    _, rf = inexact_newton_fresh(A, B, C, cfg)
    assert rs.converged and rf.converged
    assert rs.memory[-1] <= max(rf.fresh_memory)


# --- dense Newton oracle


def test_dense_oracle_scalar():
    X = dense_newton_oracle(np.array([[-1.0]]), np.array([[1.0]]), np.array([[1.0]]))
    assert X[0, 0] == pytest.approx(np.sqrt(2) - 1, rel=1e-12)


def test_dense_oracle_exact_start_takes_no_step():
    A, B, C = sparse_care(20, 1, 1, 7)
    Xs = solve_riccati_dense(A.toarray(), B, C)
    X, its = dense_newton_oracle(A, B, C, X0=Xs, return_iterates=True)
    assert len(its) == 1
    assert np.array_equal(X, Xs)


def test_dense_oracle_n50_and_monotone():
    A, B, C = sparse_care(50, 2, 1, 8)
    Xh = solve_riccati_dense(A.toarray(), B, C)
    X, its = dense_newton_oracle(A, B, C, return_iterates=True)
    assert _rel(X, Xh) <= 1e-8
    # from X_0 = 0 the iterates decrease after the first step
    for Xa, Xb in zip(its[1:], its[2:]):
        assert np.linalg.eigvalsh(Xa - Xb).min() >= -1e-9 * np.linalg.norm(Xh)


def test_dense_oracle_size_guard():
    with pytest.raises(ConfigError):
        dense_newton_oracle(sp.identity(501) * -1.0, np.ones((501, 1)), np.ones((1, 501)))
