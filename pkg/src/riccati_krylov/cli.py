"""Command-line front end: ``gen``, ``solve``, ``bench`` and ``stability``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    ExperimentConfig,
    build_problem,
    run_experiment,
    shift_to_negdef,
    stability_report,
)
from .errors import ConfigError, RiccatiKrylovError
from .pnk import pnk_solve
from .sparsekernels import load_matrix_market, write_matrix_market


def _problem_from_args(args) -> dict:
    problem = {"type": args.problem, "p": args.p, "q": args.q}
    if args.problem == "laplacian3d":
        problem["n0"] = args.n0
    elif args.problem == "synthetic":
        problem["n"] = args.n
    if args.ctb:
        problem["ctb"] = True
    return problem


def cmd_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.matrix:
        A = load_matrix_market(args.matrix)
        write_matrix_market(out / "A.mtx", shift_to_negdef(A) if args.shift else A)
        print(f"wrote {out / 'A.mtx'}")
        return 0
    A, B, C = build_problem(_problem_from_args(args), args.seed)
    write_matrix_market(out / "A.mtx", A)
    write_matrix_market(out / "B.mtx", B)
    write_matrix_market(out / "C.mtx", C)
    print(f"wrote A ({A.n}x{A.n}, nnz {A.matrix.nnz}), B {B.shape}, C {C.shape} to {out}")
    return 0


def _print_summary(report) -> None:
    status = "converged" if report.converged else "NOT converged"
    print(f"{report.method}: {status}; newton_steps={report.newton_steps} basis_dim={report.basis_dim} "
          f"memory={report.memory_vectors} rank={report.rank} rel_res={report.rel_res:.3e} "
          f"time={report.seconds:.2f}s")
    if report.message:
        print(f"  note: {report.message}")


def cmd_solve(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    if args.out_dir:
        cfg = replace(cfg, out_dir=args.out_dir)
    _, report = run_experiment(cfg)
    _print_summary(report)
    return 0 if report.converged else 3


def _load_suite(path) -> list:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if isinstance(data, dict):
        data = data.get("configs", [data])
    if not isinstance(data, list):
        raise ConfigError(f"{path}: expected a list of configs or an object with 'configs'")
    return [ExperimentConfig.from_dict(d) for d in data]


def cmd_bench(args) -> int:
    cfgs = []
    for path in args.configs:
        cfgs.extend(_load_suite(path))
    failed = 0
    print(f"{'#':>3} {'method':<10} {'k':>4} {'dim':>5} {'mem':>5} {'rank':>5} {'rel_res':>10} {'time':>8}")
    for i, cfg in enumerate(cfgs):
        if args.out_dir:
            cfg = replace(cfg, out_dir=str(Path(args.out_dir) / f"{i:02d}_{cfg.method}"))
        try:
            _, r = run_experiment(cfg)
        except RiccatiKrylovError as exc:
            failed += 1
            print(f"{i:>3} {cfg.method:<10} error: {type(exc).__name__}: {exc}")
            continue
        failed += not r.converged
        print(f"{i:>3} {r.method:<10} {r.newton_steps:>4} {r.basis_dim:>5} {r.memory_vectors:>5} "
              f"{r.rank:>5} {r.rel_res:>10.3e} {r.seconds:>7.2f}s")
    return 0 if failed == 0 else 3


def cmd_stability(args) -> int:
    if args.config:
        cfg = ExperimentConfig.from_json(args.config)
    else:
        problem = {"type": "laplacian3d", "n0": args.n0, "p": 1, "ctb": True}
        cfg = ExperimentConfig(problem=problem, method="pnk_ek" if args.kind == "extended" else "pnk_rk",
                               eps=args.eps, stab_mode="kernel", seed=args.seed)
    if cfg.method not in ("pnk_ek", "pnk_rk"):
        raise ConfigError("stability needs a projected Newton method (pnk_ek or pnk_rk)")
    A, B, C = build_problem(cfg.problem, cfg.seed)
    if A.n > args.nmax:
        raise ConfigError(f"n = {A.n} exceeds nmax = {args.nmax}")
    scfg = replace(cfg.solver_config(), keep_iterates=True)
    _, report = pnk_solve(A, B, C, cfg=scfg)
    dims = np.cumsum(report.basis.block_sizes)
    table = stability_report(A, B, report.iterates, args.nmax, V=report.basis.V, dims=dims, path=args.out)
    _print_summary(report)
    print(f"largest abscissa over all closed-loop matrices: {table.max():.6e}")
    print(f"wrote {table.shape[0]} x {table.shape[1]} table to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="riccati-krylov",
                                 description="Low-rank solvers for large algebraic Riccati equations.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a test problem as Matrix Market files")
    g.add_argument("--problem", choices=["laplacian3d", "synthetic"], default="laplacian3d")
    g.add_argument("--n0", type=int, default=20, help="grid points per direction (laplacian3d)")
    g.add_argument("--n", type=int, default=1024, help="order (synthetic)")
    g.add_argument("--p", type=int, default=1)
    g.add_argument("--q", type=int, default=1)
    g.add_argument("--ctb", action="store_true", help="use C^T = B")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--matrix", help="instead, rewrite this Matrix Market file")
    g.add_argument("--shift", action="store_true", help="with --matrix: shift to a negative definite matrix")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="run one JSON experiment config")
    s.add_argument("config")
    s.add_argument("--out-dir", help="override out_dir of the config")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="run a suite of configs")
    b.add_argument("configs", nargs="+", help="JSON files holding a config, a list, or {'configs': [...]}")
    b.add_argument("--out-dir", help="write per-run CSVs below this directory")
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("stability", help="closed-loop spectral abscissae along the Newton iterates")
    t.add_argument("--config", help="JSON config (pnk_ek or pnk_rk); default is the Laplacian C^T = B fixture")
    t.add_argument("--n0", type=int, default=10)
    t.add_argument("--kind", choices=["extended", "rational"], default="extended")
    t.add_argument("--eps", type=float, default=1e-8)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--nmax", type=int, default=2000)
    t.add_argument("--out", required=True, help="CSV path")
    t.set_defaults(func=cmd_stability)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    except RiccatiKrylovError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
