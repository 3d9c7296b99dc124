"""Command line entry point: ``lorschwarz solve | table <name> | verify [--full]``."""

from __future__ import annotations

import argparse
import json
import sys
import warnings

from .config import ConfigError, RunConfig, read_config
from .experiments import TABLES, StageError, report_row, run_solve, run_table, to_csv

# flag -> RunConfig field
_FLAGS = {
    "--mesh": ("mesh", str), "--refine": ("refine", int), "--p": ("p", int), "--disc": ("disc", str),
    "--eta": ("eta", float), "--penalty-h": ("penalty_h", str), "--coeff": ("coeff", str),
    "--seed": ("seed", int), "--patches": ("patches", str), "--extend-layers": ("extend_layers", int),
    "--aspect-trigger": ("aspect_trigger", float), "--smoother": ("smoother", str),
    "--local-solver": ("local_solver", str), "--quadrature": ("quadrature", str), "--rhs": ("rhs", str),
    "--tol": ("tol", float), "--maxit": ("maxit", int), "--out": ("out", str),
}


def _add_run_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="key=value file; explicit flags override it")
    for flag, (dest, typ) in _FLAGS.items():
        sp.add_argument(flag, dest=dest, type=typ, default=None)
    sp.add_argument("--no-symmetrize", dest="symmetrize", action="store_false", default=None,
                    help="use the plain (nonsymmetric) V-cycle")


def config_from_args(args: argparse.Namespace) -> RunConfig:
    over = read_config(args.config) if args.config else {}
    for dest, _ in list(_FLAGS.values()) + [("symmetrize", bool)]:
        v = getattr(args, dest, None)
        if v is not None:
            over[dest] = v
    return RunConfig(**over)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lorschwarz", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="single solve with a full report")
    _add_run_flags(s)
    s.add_argument("--json", action="store_true", help="print the report as JSON")
    t = sub.add_parser("table", help="run a parameter sweep and emit CSV")
    t.add_argument("name", help=", ".join(TABLES))
    _add_run_flags(t)
    v = sub.add_parser("verify", help="self-checks (quick) or acceptance regressions (--full)")
    v.add_argument("--full", action="store_true")
    return ap


def _cmd_solve(args) -> int:
    cfg = config_from_args(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = run_solve(cfg)
    for w in rep.info["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    if args.json:
        print(json.dumps({"iterations": rep.iterations, "converged": rep.converged, "kappa_est": rep.kappa,
                          "dofs": rep.dofs, "residuals": rep.residuals, **rep.info}, indent=2, default=str))
    else:
        info = rep.info
        print(f"dofs {rep.dofs}  nnz(K_h) {info['nnz_Kh']}  elements {info['n_elements']}")
        print(f"iterations {rep.iterations}  converged {rep.converged}  kappa_est {rep.kappa:.4g}")
        if rep.breakdown:
            print(f"breakdown: {rep.breakdown}")
        print("timings " + "  ".join(f"{k} {v:.3f}s" for k, v in info["timings"].items()))
        print("config " + " ".join(f"{k}={v}" for k, v in info["config"].items()))
        print(f"smoother {info['smoother']}  ilu {info['ilu_variant']}  coarse {info['coarse_solver']}"
              f"  quadrature {info['quadrature']}  symmetrize {info['symmetrize']}"
              f"  penalty_h {info['penalty_h_rule']}")
    if cfg.out:
        to_csv([report_row("solve", cfg, rep)], cfg.out)
    return 0 if rep.converged else 1


def _cmd_table(args) -> int:
    if args.name not in TABLES:
        print(f"error: unknown experiment {args.name!r}; choose from {', '.join(TABLES)}", file=sys.stderr)
        return 2
    base = config_from_args(args)
    kw = {} if args.name in ("smoother-study", "spectral") else {"base": base}

    def progress(row):
        print(f"  {row.get('experiment')} p={row.get('p')} mesh={row.get('mesh')} "
              f"iterations={row.get('iterations', '')}", file=sys.stderr)

    rows, text = run_table(args.name, out=base.out, progress=progress, **kw)
    sys.stdout.write(text)
    fails = [r for r in rows if r.get("pass") is False]
    if fails:
        print(f"{len(fails)} row(s) outside the acceptance tolerance", file=sys.stderr)
    return 1 if fails else 0


def _cmd_verify(args) -> int:
    from .acceptance import run_checks

    results = run_checks(full=args.full, echo=print)
    bad = sum(not r.passed for r in results)
    print(f"{len(results) - bad}/{len(results)} passed")
    return 1 if bad else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return {"solve": _cmd_solve, "table": _cmd_table, "verify": _cmd_verify}[args.command](args)
    except (ConfigError, StageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
