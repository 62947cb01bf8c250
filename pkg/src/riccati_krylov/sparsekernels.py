"""Sparse storage, direct factorizations, low-rank-updated solves and Matrix Market I/O."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import maximum_bipartite_matching

from .errors import CapacitanceError, MatrixMarketError, NonFiniteInputError, SingularFactorError

__all__ = [
    "SparseOperator",
    "Factorization",
    "LowRankUpdatedOperator",
    "as_operator",
    "factorize",
    "solve",
    "smw_solve",
    "spmm",
    "load_matrix_market",
    "write_matrix_market",
]

# pivots this small relative to the largest one mark a numerically singular matrix
_PIVOT_RATIO = 1e-13


@dataclass(frozen=True)
class SparseOperator:
    """Square sparse real matrix in CSC layout."""

    matrix: sp.csc_matrix
    symmetric: bool = False
    norm1: float = field(default=0.0, compare=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def shape(self):
        return self.matrix.shape

    def dot(self, X: np.ndarray) -> np.ndarray:
        return self.matrix @ X

    def rdot(self, X: np.ndarray) -> np.ndarray:
        """``A^T X``."""
        if self.symmetric:
            return self.matrix @ X
        return self.matrix.T @ X

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def as_operator(A, symmetric: Optional[bool] = None) -> SparseOperator:
    """Wrap a dense array, sparse matrix or operator as :class:`SparseOperator`."""
    if isinstance(A, SparseOperator):
        return A
    M = sp.csc_matrix(A, dtype=float)
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"operator must be square, got {M.shape}")
    if not np.all(np.isfinite(M.data)):
        raise NonFiniteInputError("sparse matrix has non-finite entries")
    M.sum_duplicates()
    M.sort_indices()
    if symmetric is None:
        symmetric = abs(M - M.T).max() == 0.0 if M.nnz else True
    norm1 = float(abs(M).sum(axis=0).max()) if M.nnz else 0.0
    return SparseOperator(matrix=M, symmetric=bool(symmetric), norm1=norm1)


def spmm(A: SparseOperator, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X)
    if X.shape[0] != A.n:
        raise ValueError(f"dimension mismatch: operator {A.n}, block {X.shape[0]} rows")
    return A.dot(X)


@dataclass(frozen=True)
class Factorization:
    """LU factors of ``A - shift*I`` with a fill-reducing column ordering."""

    lu: object
    shift: complex
    operator: SparseOperator

    @property
    def n(self) -> int:
        return self.operator.n

    def shifted_dot(self, X):
        Y = self.operator.dot(X)
        if self.shift != 0:
            Y = Y - self.shift * X
        return Y

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return solve(self, rhs)


def factorize(A, shift: complex = 0.0) -> Factorization:
    """Sparse LU of ``A - shift*I``.

    Raises :class:`SingularFactorError` with ``kind`` set to ``"structural"``
    when the sparsity pattern admits no perfect matching and ``"numerical"``
    when a pivot is negligible.
    """
    A = as_operator(A)
    n = A.n
    M = A.matrix
    if shift != 0:
        if np.iscomplex(shift):
            M = M.astype(complex) - complex(shift) * sp.identity(n, dtype=complex, format="csc")
        else:
            shift = float(np.real(shift))
            M = M - shift * sp.identity(n, format="csc")
        M = sp.csc_matrix(M)
        M.eliminate_zeros()
    else:
        shift = 0.0
    pattern = sp.csr_matrix(M)
    pattern.eliminate_zeros()
    matching = maximum_bipartite_matching(pattern, perm_type="column")
    if np.any(matching < 0):
        raise SingularFactorError(
            f"matrix minus shift {shift} is structurally singular "
            f"({int(np.sum(matching < 0))} unmatched rows)",
            kind="structural",
        )
    try:
        lu = spla.splu(sp.csc_matrix(M), permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SingularFactorError(f"exactly singular pivot for shift {shift}: {exc}", kind="numerical") from exc
    pivots = np.abs(lu.U.diagonal())
    if pivots.size and pivots.min() <= _PIVOT_RATIO * pivots.max():
        raise SingularFactorError(
            f"numerically singular for shift {shift}: pivot ratio {pivots.min() / pivots.max():.2e}",
            kind="numerical",
        )
    return Factorization(lu=lu, shift=shift, operator=A)


def solve(F: Factorization, rhs: np.ndarray) -> np.ndarray:
    """Solve ``(A - sI) X = rhs`` with one step of iterative refinement."""
    rhs = np.asarray(rhs)
    if rhs.shape[0] != F.n:
        raise ValueError(f"dimension mismatch: factorization {F.n}, right-hand side {rhs.shape[0]} rows")
    if rhs.size == 0:
        return np.zeros(rhs.shape, dtype=np.result_type(rhs, F.lu.U.dtype))
    cplx = np.iscomplexobj(rhs) or F.lu.U.dtype.kind == "c"
    if cplx and F.lu.U.dtype.kind != "c":
        return solve(F, rhs.real) + 1j * solve(F, rhs.imag)
    b = rhs.astype(complex if cplx else float)
    X = F.lu.solve(b)
    X = X + F.lu.solve(b - F.shifted_dot(X))
    return X


class LowRankUpdatedOperator:
    """The operator ``A - U Vt`` with solves by Sherman-Morrison-Woodbury."""

    def __init__(self, base: Factorization, U: np.ndarray, Vt: np.ndarray):
        self.base = base
        self.U = np.asarray(U, dtype=float).reshape(base.n, -1)
        self.Vt = np.asarray(Vt, dtype=float).reshape(-1, base.n)
        self._AinvU = solve(base, self.U)
        k = self.U.shape[1]
        self._cap = np.eye(k) - self.Vt @ self._AinvU
        if k and np.linalg.cond(self._cap) > 1e13:
            raise CapacitanceError(
                f"capacitance matrix is singular (condition {np.linalg.cond(self._cap):.2e}); "
                "the low-rank update makes the operator singular"
            )

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def norm1(self) -> float:
        return self.base.operator.norm1

    def dot(self, X):
        return self.base.shifted_dot(X) - self.U @ (self.Vt @ X)

    def solve(self, rhs):
        x = self._apply_inverse(rhs)
        return x + self._apply_inverse(rhs - self.dot(x))

    def _apply_inverse(self, rhs):
        y = solve(self.base, rhs)
        if self.U.shape[1] == 0:
            return y
        return y + self._AinvU @ np.linalg.solve(self._cap, self.Vt @ y)


def smw_solve(F: Factorization, U: np.ndarray, Vt: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``(A - sI - U Vt) x = rhs`` from the factorization of ``A - sI``."""
    return LowRankUpdatedOperator(F, U, Vt).solve(rhs)


# ---------------------------------------------------------------- Matrix Market


def load_matrix_market(path: Union[str, Path]) -> Union[SparseOperator, np.ndarray]:
    """Read a real Matrix Market file.

    Coordinate files yield a :class:`SparseOperator` when square (otherwise a
    CSC matrix); array files yield a dense ndarray.  Symmetric storage is
    expanded to both triangles.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        rows, cols, _, fmt, fld, symm = scipy.io.mminfo(str(path))
    except Exception as exc:
        raise MatrixMarketError(f"{path}: malformed Matrix Market header ({exc})") from exc
    if fld not in ("real", "integer"):
        raise MatrixMarketError(f"{path}: field '{fld}' is not supported, need real")
    try:
        M = scipy.io.mmread(str(path))
    except Exception as exc:
        raise MatrixMarketError(f"{path}: invalid Matrix Market data ({exc})") from exc
    if M.shape != (rows, cols):
        raise MatrixMarketError(f"{path}: read shape {M.shape} differs from header {(rows, cols)}")
    if fmt == "array":
        return np.asarray(M, dtype=float)
    M = sp.csc_matrix(M, dtype=float)
    if rows == cols:
        return as_operator(M, symmetric=(symm == "symmetric") or None)
    return M


def write_matrix_market(path: Union[str, Path], M, *, symmetric: Optional[bool] = None) -> None:
    """Write ``M`` with 17 significant digits so values round-trip exactly.

    Dense arrays use the ``array`` format, sparse matrices and operators the
    ``coordinate`` format (``symmetric`` storage when the matrix is symmetric).
    """
    path = Path(path)
    if isinstance(M, SparseOperator):
        if symmetric is None:
            symmetric = M.symmetric
        M = M.matrix
    lines = []
    if sp.issparse(M):
        M = sp.coo_matrix(M)
        if symmetric is None:
            symmetric = M.shape[0] == M.shape[1] and abs(M - M.T).max() == 0.0 if M.nnz else False
        if symmetric:
            keep = M.row >= M.col
            r, c, v = M.row[keep], M.col[keep], M.data[keep]
        else:
            r, c, v = M.row, M.col, M.data
        order = np.lexsort((r, c))
        lines.append(f"%%MatrixMarket matrix coordinate real {'symmetric' if symmetric else 'general'}")
        lines.append(f"{M.shape[0]} {M.shape[1]} {len(v)}")
        lines.extend(f"{i + 1} {j + 1} {x:.17g}" for i, j, x in zip(r[order], c[order], v[order]))
    else:
        A = np.atleast_2d(np.asarray(M, dtype=float))
        lines.append("%%MatrixMarket matrix array real general")
        lines.append(f"{A.shape[0]} {A.shape[1]}")
        lines.extend(f"{x:.17g}" for x in A.ravel(order="F"))
    path.write_text("\n".join(lines) + "\n")
