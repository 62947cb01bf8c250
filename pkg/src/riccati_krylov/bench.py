"""Test problems, configuration-driven experiment runs and CSV reports."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .baselines import galerkin_riccati_solve, inexact_newton_fresh
from .densekernels import spectral_abscissa
from .errors import ConfigError, RiccatiKrylovError
from .pnk import PNKConfig, SolveReport, pnk_solve
from .sparsekernels import SparseOperator, as_operator, load_matrix_market

__all__ = [
    "ExperimentConfig",
    "METHODS",
    "gen_laplacian3d",
    "gen_scaled_random",
    "gen_synthetic_nonsymmetric",
    "shift_to_negdef",
    "build_problem",
    "run_experiment",
    "stability_report",
    "write_summary_csv",
    "write_history_csv",
]

METHODS = ("pnk_ek", "pnk_rk", "eksm", "rksm", "ink_fresh")
SUMMARY_FIELDS = ("method", "newton_steps", "basis_dim", "memory_vectors", "rank", "rel_res", "seconds")
HISTORY_FIELDS = ("m", "k", "rel_res", "inner_res", "eta", "lambda")


# ------------------------------------------------------------------ generators


def gen_laplacian3d(n0: int) -> SparseOperator:
    """Seven-point finite-difference Laplacian on an ``n0^3`` grid, mesh ``1/(n0-1)``."""
    if n0 < 2:
        raise ConfigError(f"n0 must be at least 2, got {n0}")
    h2 = (n0 - 1) ** 2
    T = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n0, n0), format="csc") * h2
    I = sp.identity(n0, format="csc")
    A = sp.kron(sp.kron(T, I), I) + sp.kron(sp.kron(I, T), I) + sp.kron(sp.kron(I, I), T)
    return as_operator(A.tocsc(), symmetric=True)


def gen_scaled_random(n: int, cols: int, scale: float, seed: int) -> np.ndarray:
    """``scale * U[0, 1)`` block of shape ``(n, cols)`` from a seeded PCG64 stream."""
    return scale * np.random.default_rng(seed).random((n, cols))


def _max_sym_eig(M: sp.spmatrix) -> float:
    n = M.shape[0]
    S = (M + M.T) * 0.5
    if n <= 400:
        return float(np.linalg.eigvalsh(S.toarray())[-1])
    try:
        return float(spla.eigsh(S.tocsc(), k=1, which="LA", return_eigenvectors=False, tol=1e-10)[0])
    except spla.ArpackError as exc:
        raise RiccatiKrylovError(f"extreme eigenvalue estimation failed: {exc}") from exc


def shift_to_negdef(T) -> SparseOperator:
    """``A = -T - (lmax + 1) I`` where ``lmax`` is the top eigenvalue of the symmetric part of ``-T``.

    The symmetric part of the result has all eigenvalues at most ``-1``.
    """
    M = T.matrix if isinstance(T, SparseOperator) else sp.csc_matrix(T, dtype=float)
    lmax = _max_sym_eig(-M)
    A = -M - (lmax + 1.0) * sp.identity(M.shape[0], format="csc")
    return as_operator(sp.csc_matrix(A))


def gen_synthetic_nonsymmetric(n: int, seed: int = 0, density: float = 5e-3, skew: float = 2.0) -> SparseOperator:
    """Stable nonsymmetric sparse matrix: 2-D convection-diffusion plus a random sparse part.

    Serves as the default fixture when no external matrix is supplied.
    """
    rng = np.random.default_rng(seed)
    k = max(2, int(round(math.sqrt(n))))
    n = k * k
    D = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(k, k))
    Cv = sp.diags([-1.0, 1.0], [-1, 1], shape=(k, k))
    I = sp.identity(k)
    T = sp.kron(D, I) + sp.kron(I, D) + skew * (sp.kron(Cv, I) + 0.5 * sp.kron(I, Cv))
    R = sp.random(n, n, density=density, random_state=rng, data_rvs=rng.standard_normal)
    return shift_to_negdef((T + R).tocsc())


# ------------------------------------------------------------------ configuration


@dataclass
class ExperimentConfig:
    """One experiment.

    ``problem`` is a mapping with a ``type`` key:

    * ``"laplacian3d"``: ``n0``, optional ``p``, ``q`` (default 1),
      ``ctb`` (use ``C^T = B``)
    * ``"synthetic"``: ``n``, optional ``p``, ``q``
    * ``"files"``: ``paths`` with ``A``, ``B`` and optionally ``C``
      (Matrix Market); ``shift`` applies :func:`shift_to_negdef` to ``A``;
      ``ctb`` uses ``C^T = B`` when no ``C`` is given

    Any problem accepts ``zero_c``.
    """

    problem: dict
    method: str = "pnk_ek"
    eps: float = 1e-8
    eta_mode: str = "superlinear"
    eta_bar: float = 0.9
    alpha: float = 0.01
    d: int = 1
    m_max: int = 300
    defl_tol: float = 1e-12
    trunc_tol: Optional[float] = None
    stab_mode: Optional[str] = None
    seed: int = 0
    s0: Optional[list] = None
    out_dir: Optional[str] = None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "problem" not in data:
            raise ConfigError("config needs a 'problem' entry")
        return cls(**data).validate()

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> "ExperimentConfig":
        if not isinstance(self.problem, dict) or "type" not in self.problem:
            raise ConfigError("problem must be an object with a 'type' key")
        if self.problem["type"] not in ("laplacian3d", "synthetic", "files"):
            raise ConfigError(f"unknown problem type {self.problem['type']!r}")
        if self.problem["type"] == "laplacian3d" and "n0" not in self.problem:
            raise ConfigError("laplacian3d problem needs n0")
        if self.problem["type"] == "files" and "paths" not in self.problem:
            raise ConfigError("files problem needs paths")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.eta_mode not in ("superlinear", "quadratic"):
            raise ConfigError(f"unknown eta_mode {self.eta_mode!r}")
        if self.s0 is not None and len(self.s0) != 2:
            raise ConfigError("s0 must hold two bounds")
        self.solver_config()
        return self

    def solver_config(self) -> PNKConfig:
        kind = "rational" if self.method in ("pnk_rk", "rksm") else "extended"
        return PNKConfig(
            kind=kind, eps=self.eps, eta_mode=self.eta_mode, eta_bar=self.eta_bar, alpha=self.alpha,
            d=self.d, m_max=self.m_max, defl_tol=self.defl_tol, trunc_tol=self.trunc_tol,
            stab_mode=self.stab_mode, s0=None if self.s0 is None else tuple(self.s0),
        ).validate()


def build_problem(problem: dict, seed: int = 0):
    """``(A, B, C)`` for a problem entry of :class:`ExperimentConfig`.

    ``zero_c`` in the entry replaces ``C`` by zeros.
    """
    A, B, C = _build(problem, seed)
    if problem.get("zero_c"):
        C = np.zeros_like(C)
    return A, B, C


def _build(problem: dict, seed: int):
    kind = problem["type"]
    p, q = int(problem.get("p", 1)), int(problem.get("q", 1))
    if kind == "laplacian3d":
        n0 = int(problem["n0"])
        A = gen_laplacian3d(n0)
        h2 = 1.0 / (n0 - 1) ** 2
        B = gen_scaled_random(A.n, p, h2, seed)
        C = B.T.copy() if problem.get("ctb") else gen_scaled_random(A.n, q, h2, seed + 1).T
        return A, B, C
    if kind == "synthetic":
        A = gen_synthetic_nonsymmetric(int(problem.get("n", 1024)), seed=seed)
        B = gen_scaled_random(A.n, p, 1.0, seed + 2)
        C = B.T.copy() if problem.get("ctb") else gen_scaled_random(A.n, q, 1.0, seed + 3).T
        return A, B, C
    if kind == "files":
        paths = problem["paths"]
        A = load_matrix_market(paths["A"])
        if not isinstance(A, SparseOperator):
            A = as_operator(A)
        if problem.get("shift"):
            A = shift_to_negdef(A)
        B = np.asarray(_dense(load_matrix_market(paths["B"])), dtype=float).reshape(A.n, -1)
        if "C" in paths:
            C = np.atleast_2d(_dense(load_matrix_market(paths["C"])))
            if C.shape[1] != A.n and C.shape[0] == A.n:
                C = C.T
        elif problem.get("ctb"):
            C = B.T.copy()
        else:
            C = gen_scaled_random(A.n, q, 1.0, seed + 1).T
        return A, B, C
    raise ConfigError(f"unknown problem type {kind!r}")


def _dense(M):
    if isinstance(M, SparseOperator):
        return M.toarray()
    return M.toarray() if sp.issparse(M) else np.asarray(M)


# ------------------------------------------------------------------ runs


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def write_summary_csv(path, report: SolveReport) -> None:
    row = (report.method, report.newton_steps, report.basis_dim, report.memory_vectors,
           report.rank, float(report.rel_res), float(report.seconds))
    Path(path).write_text(_csv_text(SUMMARY_FIELDS, [row]))


def write_history_csv(path, report: SolveReport) -> None:
    rows = [(h.m, h.k, float(h.rel_res), float(h.inner_res), float(h.eta), float(h.lam))
            for h in report.history]
    Path(path).write_text(_csv_text(HISTORY_FIELDS, rows))


def run_experiment(cfg: ExperimentConfig):
    """Run one configuration; writes ``summary.csv`` and ``history.csv`` when ``out_dir`` is set.

    Returns ``(P, report)``.
    """
    cfg.validate()
    A, B, C = build_problem(cfg.problem, cfg.seed)
    scfg = cfg.solver_config()
    if cfg.method in ("pnk_ek", "pnk_rk"):
        P, report = pnk_solve(A, B, C, cfg=scfg)
    elif cfg.method in ("eksm", "rksm"):
        P, report = galerkin_riccati_solve(A, B, C, scfg.kind, scfg)
    else:
        P, report = inexact_newton_fresh(A, B, C, scfg)
    report.method = cfg.method
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_summary_csv(out / "summary.csv", report)
        write_history_csv(out / "history.csv", report)
    return P, report


# ------------------------------------------------------------------ closed-loop spectra


def _as_signed(f):
    if isinstance(f, tuple):
        Q, D = f
        return np.asarray(Q, float), np.asarray(D, float)
    P = np.asarray(f, dtype=float)
    return P, np.eye(P.shape[1])


def stability_report(A, B, factor_history, nmax: int = 2000, *, V=None, dims=None, path=None):
    """Spectral abscissae of closed-loop matrices ``A - X_k B B^T``.

    ``factor_history`` lists the iterates as factors ``P`` (``X = P P^T``) or
    signed pairs ``(Q, D)`` (``X = Q D Q^T``).  Column ``k`` of the result
    belongs to ``X_k``.  Row 0 holds the abscissa of the full closed-loop
    matrix; when an orthonormal basis ``V`` and its nested dimensions
    ``dims`` are given, row ``i`` holds the abscissa of
    ``V_i^T (A - X_k B B^T) V_i`` with ``V_i = V[:, :dims[i-1]]``.

    Returns the table as a 2-D array and writes it as CSV to ``path`` if given.
    """
    A = as_operator(A)
    n = A.n
    if n > nmax:
        raise ConfigError(f"dense eigensolves need n <= nmax = {nmax}, got n = {n}")
    Ad = A.toarray()
    B = np.asarray(B, dtype=float).reshape(n, -1)
    dims = list(dims) if dims is not None else []
    table = np.empty((1 + len(dims), len(factor_history)))
    for k, f in enumerate(factor_history):
        Q, D = _as_signed(f)
        K = Q @ (D @ (Q.T @ B))
        F = Ad - K @ B.T
        table[0, k] = spectral_abscissa(F)
        if dims:
            FV = F @ V[:, : dims[-1]]
            for i, d in enumerate(dims, start=1):
                table[i, k] = spectral_abscissa(V[:, :d].T @ FV[:, :d])
    if path is not None:
        header = [f"k{k}" for k in range(table.shape[1])]
        Path(path).write_text(_csv_text(header, table.tolist()))
    return table
