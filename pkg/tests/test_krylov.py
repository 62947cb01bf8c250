import numpy as np
import pytest
import scipy.sparse as sp

from riccati_krylov.bench import gen_laplacian3d
from riccati_krylov.errors import InvariantSubspaceError, ShiftSelectionError
from riccati_krylov.krylov import (
    ShiftPool,
    _log_inv_r,
    adaptive_shift,
    deflate_block,
    ek_expand,
    ek_init,
    estimate_spectral_bounds,
    rk_expand,
    rk_init,
)
from riccati_krylov.sparsekernels import as_operator, factorize

from _problems import dense_care


def _ek(A, C, B=None):
    A = as_operator(A)
    return ek_init(A, factorize(A), C, B=B)


def _orth_err(V):
    return np.linalg.norm(V.T @ V - np.eye(V.shape[1]))


# --- deflate_block


def test_deflate_in_span_gives_rank_zero():
    V, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((30, 4)))
    W = V @ np.random.default_rng(1).standard_normal((4, 2))
    Q, rank, _, _ = deflate_block(W, V)
    assert rank == 0 and Q.shape == (30, 0)


def test_deflate_random_full_rank():
    rng = np.random.default_rng(2)
    V, _ = np.linalg.qr(rng.standard_normal((40, 5)))
    W = rng.standard_normal((40, 3))
    Q, rank, coeffs, R = deflate_block(W, V)
    assert rank == 3
    assert _orth_err(Q) <= 1e-12
    assert np.linalg.norm(V.T @ Q) <= 1e-12
    assert np.linalg.norm(V @ coeffs + Q @ R - W) <= 1e-12 * np.linalg.norm(W)


def test_deflate_duplicated_column():
    W = np.random.default_rng(3).standard_normal((20, 3))
    W = np.hstack([W, W[:, :1]])
    _, rank, _, _ = deflate_block(W)
    assert rank == 3


# --- extended


def test_ek_init_deflates_parallel_inverse():
    n = 10
    A = -sp.identity(n, format="csc")
    c = np.random.default_rng(4).standard_normal((n, 1))
    bs = _ek(A, c)
    assert bs.dim == 1
    assert bs.deflation_log


def test_ek_init_laplacian_orthonormal_and_gamma():
    A = gen_laplacian3d(3)
    C = np.random.default_rng(5).standard_normal((A.n, 1))
    bs = _ek(A, C)
    assert bs.dim == 2
    assert _orth_err(bs.V) <= 1e-12
    assert np.linalg.norm(bs.V @ bs.start_coeffs - C) <= 1e-12 * np.linalg.norm(C)


@pytest.mark.parametrize("q", [1, 3])
def test_ek_expand_invariants(q):
    A, B, C = dense_care(60, 2, q, 6)
    Aop = as_operator(A)
    bs = _ek(Aop, C.T, B=B)
    norm1 = Aop.norm1
    for _ in range(12):
        if bs.invariant:
            break
        d0 = bs.dim
        ek_expand(bs)
        assert bs.dim - d0 <= 2 * q
        assert bs.dim <= 60
        assert _orth_err(bs.V_all) <= 1e-10 * bs.dim
        np.testing.assert_allclose(bs.T, bs.V.T @ A @ bs.V, atol=1e-10 * np.linalg.norm(A))
        np.testing.assert_allclose(bs.B_proj, bs.V.T @ B, atol=1e-12)
        assert bs.relation_residual() <= 1e-8 * norm1


def test_ek_reaches_invariant_subspace():
    A, _, C = dense_care(8, 1, 1, 7)
    bs = _ek(A, C.T)
    with pytest.raises(InvariantSubspaceError):
        for _ in range(20):
            ek_expand(bs)
    assert bs.dim <= 8 and bs.invariant


# --- rational


def test_rk_init_mirrors_extended():
    A = gen_laplacian3d(3)
    Q, _ = np.linalg.qr(np.random.default_rng(8).standard_normal((A.n, 2)))
    bs = rk_init(A, Q)
    np.testing.assert_allclose(np.abs(bs.V.T @ Q), np.eye(2), atol=1e-14)
    C = np.random.default_rng(9).standard_normal((A.n, 2))
    bs = rk_init(A, C)
    assert _orth_err(bs.V) <= 1e-12
    assert np.linalg.norm(bs.V @ bs.start_coeffs - C) <= 1e-12 * np.linalg.norm(C)


def test_rk_real_shifts_on_symmetric_matrix():
    A = gen_laplacian3d(4)
    C = np.random.default_rng(10).standard_normal((A.n, 1))
    bs = rk_init(A, C)
    for s in (5.0, 40.0, 200.0, 15.0):
        rk_expand(bs, s)
        assert np.isrealobj(bs.V)
        assert _orth_err(bs.V_all) <= 1e-10 * bs.dim
        assert bs.relation_residual() <= 1e-8 * A.norm1
        np.testing.assert_allclose(bs.T, bs.V.T @ A.dot(bs.V), atol=1e-10 * A.norm1)


def test_rk_complex_pair_keeps_real_basis():
    A, _, C = dense_care(80, 1, 2, 11)
    Aop = as_operator(A)
    bs = rk_init(Aop, C.T)
    rk_expand(bs, 1.5)
    before = bs.V_all.shape[1]
    rk_expand(bs, 2.0 + 1.0j)
    assert bs.V_all.shape[1] - before == 2 * 2
    assert np.isrealobj(bs.V_all) and np.isrealobj(bs.T)
    assert _orth_err(bs.V_all) <= 1e-10 * bs.dim
    assert bs.relation_residual() <= 1e-8 * Aop.norm1
    rk_expand(bs, 4.0)
    assert bs.relation_residual() <= 1e-8 * Aop.norm1


def test_rk_rejects_reused_shift():
    A = gen_laplacian3d(3)
    bs = rk_init(A, np.ones((A.n, 1)))
    rk_expand(bs, 3.0)
    with pytest.raises(ShiftSelectionError):
        rk_expand(bs, 3.0)


# --- shifts


def test_spectral_bounds_laplacian():
    A = gen_laplacian3d(4)
    w = np.abs(np.linalg.eigvalsh(A.toarray()))
    lo, hi = estimate_spectral_bounds(A)
    assert 0.9 * w.min() <= lo <= 1.5 * w.min()
    assert 0.5 * w.max() <= hi <= w.max() * (1 + 1e-12)


def test_adaptive_shift_real_spectrum_gives_real_shift():
    T = np.diag([-1.0, -3.0, -10.0])
    pool = ShiftPool(s0=(0.5, 20.0), used=[2.0, 8.0])
    s = adaptive_shift(None, T, pool)
    assert s.imag == 0.0
    assert 0.5 <= s.real <= 20.0
    assert all(abs(s - u) > 0 for u in pool.used)


def _grid_oracle(T, pool, samples):
    ritz = np.linalg.eigvals(T)
    pts = np.concatenate([-ritz, pool.candidates()])
    from scipy.spatial import ConvexHull

    xy = np.column_stack([pts.real, pts.imag])
    h = ConvexHull(xy)
    z = pts[h.vertices]
    per = samples // len(z)
    cand = np.concatenate([z[i] + np.linspace(0, 1, per) * (z[(i + 1) % len(z)] - z[i]) for i in range(len(z))])
    with np.errstate(divide="ignore"):
        v = _log_inv_r(cand, ritz, pool.used)
    return cand, v, ritz


def test_adaptive_shift_matches_grid_search():
    rng = np.random.default_rng(12)
    T = -np.diag(rng.uniform(1, 10, 6)) + 3 * np.triu(rng.standard_normal((6, 6)), 1)
    T[0, 1], T[1, 0] = 4.0, -4.0
    pool = ShiftPool(s0=(1.0, 12.0), used=[1.0, 12.0, 5.0 + 2.0j, 5.0 - 2.0j])
    s = adaptive_shift(None, T, pool)
    cand, v, ritz = _grid_oracle(T, pool, 10_000)
    got = float(_log_inv_r(np.array([s]), ritz, pool.used)[0])
    best = np.max(v[np.isfinite(v)])
    # the sampled optimum can only be beaten, never missed by more than grid resolution
    assert got >= best - 1e-3 * abs(best)
    assert all(abs(s - u) > 1e-12 for u in pool.used)
