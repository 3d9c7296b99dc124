"""Acceptance checks shared by the test suite and ``lorschwarz verify``.

Each ``criterion_k`` returns a :class:`CheckResult`; nothing raises on a
failed check so that every criterion is reported.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import RunConfig
from .experiments import (REF_SINGLE, REF_VERTEX, TABLE_NX, aniso_sweep, run_solve, spectral_sweep,
                          table_cg, table_dg_eta, table_dg_h)
from .highop import HighOrderOperator, make_coefficient
from .lor import assemble_Kh
from .mesh import anisotropic_strip_mesh, cartesian_mesh, lor_refine, perturbed_mesh
from .multigrid import smoother_study_run
from .oracles import assemble_cg, assemble_dg
from .sparse import order_mdf


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ok, detail = fn()
    return CheckResult(name, bool(ok), detail, time.perf_counter() - t0)


def _dense(apply, n):
    return np.column_stack([apply(e) for e in np.eye(n)])


def _relerr(A, B):
    return float(np.abs(A - B).max() / np.abs(B).max())


# ------------------------------------------------------------------ criteria
def criterion_1(ps=range(1, 9), eta: float = 4.0, tol: float = 1e-10) -> CheckResult:
    """Matrix-free K_p, M_p, A_IP, A_BR2 against dense oracles on 2x2 grids."""

    def run():
        worst = {"K": 0.0, "M": 0.0, "ip": 0.0, "br2": 0.0}
        for mesh in (cartesian_mesh(2, 2), perturbed_mesh(2, 2, 0.2, 3)):
            for p in ps:
                op = HighOrderOperator(mesh, p)
                K, M = assemble_cg(mesh, p, op.topo.elem_node_ids, op.boundary)
                worst["K"] = max(worst["K"], _relerr(_dense(op.apply_Kp, op.n_dofs), K))
                worst["M"] = max(worst["M"], _relerr(_dense(op.apply_Mp, op.n_dofs), M))
                for disc in ("ip", "br2"):
                    dg = HighOrderOperator(mesh, p, disc=disc, eta=eta, topo=op.topo)
                    worst[disc] = max(worst[disc], _relerr(_dense(dg.apply_dg, dg.n_dofs),
                                                           assemble_dg(mesh, p, eta, disc)))
        ok = all(v <= tol for v in worst.values())
        return ok, "max rel. error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())

    return _timed("1 operator-oracle equivalence", run)


def criterion_2(max_ratio: float = 10.0, max_growth: float = 0.2) -> CheckResult:
    def run():
        rows = spectral_sweep(range(2, 17), nx=4, trials=100, seed=0)
        ratios = {r["p"]: float(r["ratio"]) for r in rows}
        growth = ratios[16] / ratios[8] - 1
        ok = max(ratios.values()) <= max_ratio and growth < max_growth
        return ok, f"max rmax/rmin {max(ratios.values()):.3f}, growth p=8->16 {growth:+.1%}"

    return _timed("2 FEM-SEM spectral equivalence", run)


def criterion_3(points=(4, 8, 16, 32, 64)) -> CheckResult:
    def run():
        def its(sm, mode):
            return [smoother_study_run(n, sm, mode, tol=1e-12) for n in points]

        uj = its("jacobi", "uniform")
        gj = its("jacobi", "gauss-lobatto")
        mdf = its("ilu-mdf", "gauss-lobatto")
        rcm = its("ilu-rcm", "gauss-lobatto")
        conv = all(i > 0 for i in uj + gj + mdf + rcm)
        checks = {
            "uniform+jacobi spread<=4": max(uj) - min(uj) <= 4,
            "GL+jacobi x2": gj[-1] >= 2 * gj[0],
            "GL+MDF spread<=3": max(mdf) - min(mdf) <= 3,
            "GL+RCM spread<=3": max(rcm) - min(rcm) <= 3,
        }
        failed = [k for k, v in checks.items() if not v]
        detail = f"uniform/jacobi {uj}, GL/jacobi {gj}, GL/MDF {mdf}, GL/RCM {rcm}"
        if failed:
            detail += "; failed: " + ", ".join(failed)
        return conv and not failed, detail

    return _timed("3 smoother study trends", run)


def _table_check(patches, ps, nxs, plateau: bool):
    rows = table_cg(patches, ps=ps, nxs=nxs)
    ref = REF_SINGLE if patches == "single" else REF_VERTEX
    it = {(r["p"], int(r["mesh"].split(":")[1])): r["iterations"] for r in rows}
    bad = [f"p={p},nx={nx}: {it[p, nx]} > {1.5 * ref[p][TABLE_NX.index(nx)]:g}"
           for (p, nx) in it if not it[p, nx] <= 1.5 * ref[p][TABLE_NX.index(nx)]]
    bad += [f"p={r['p']},nx={r['mesh']} not converged" for r in rows if not r["converged"]]
    extra = []
    if plateau:
        for p in ps:
            if not it[p, 32] <= it[p, 16] + 4:
                bad.append(f"plateau p={p}: {it[p, 32]} > {it[p, 16]} + 4")
    else:
        for nx in nxs:
            if not it[20, nx] <= it[10, nx] + 6:
                bad.append(f"p-plateau nx={nx}: {it[20, nx]} > {it[10, nx]} + 6")
    worst = max(it, key=lambda k: it[k] / ref[k[0]][TABLE_NX.index(k[1])])
    extra.append(f"worst ratio {it[worst] / ref[worst[0]][TABLE_NX.index(worst[1])]:.2f} at p={worst[0]}, "
                 f"nx={worst[1]} ({it[worst]} its)")
    return not bad, "; ".join(extra + bad)


def criterion_4(ps=(2, 4, 8, 10, 16, 20), nxs=(2, 8, 32)) -> CheckResult:
    return _timed("4 single-patch iteration table", lambda: _table_check("single", ps, nxs, False))


def criterion_5(ps=(2, 4, 8, 16, 20), nxs=(2, 8, 16, 32)) -> CheckResult:
    return _timed("5 vertex-patch iteration table", lambda: _table_check("vertex", ps, nxs, True))


def criterion_6(max_variation: int = 3) -> CheckResult:
    def run():
        rows = table_dg_h(refinements=4, max_variation=max_variation)
        its = [r["iterations"] for r in rows]
        return rows[0]["pass"], f"BR2 p=6 iterations over 0..3 refinements {its}"

    return _timed("6 DG h-robustness", run)


def criterion_7(max_ratio: float = 1.6, max_iters: int = 60) -> CheckResult:
    def run():
        rows = table_dg_eta(max_ratio=max_ratio, max_iters=max_iters)
        parts, ok = [], True
        for disc in ("ip", "br2"):
            grp = [r for r in rows if r["disc"] == disc]
            its = [r["iterations"] for r in grp]
            ok &= grp[0]["pass"]
            ratio = max(its) / min(its) if all(isinstance(i, int) and i > 0 for i in its) else math.inf
            parts.append(f"{disc} {its} (max/min {ratio:.2f})")
        return ok, "; ".join(parts)

    return _timed("7 DG penalty robustness", run)


def criterion_8(max_ratio: float = 1.5) -> CheckResult:
    def run():
        rows = aniso_sweep(max_ratio=max_ratio)
        ok, parts = True, []
        for p in sorted({r["p"] for r in rows}):
            for label in ("none", "uniform"):
                its = [r["iterations"] for r in rows if r["p"] == p and r["extension"] == label]
                parts.append(f"p={p} {label} {its}")
                if label == "uniform":
                    ok &= all(r["pass"] for r in rows if r["p"] == p and r["extension"] == label)
        return ok, "; ".join(parts)

    return _timed("8 anisotropy robustness", run)


def _mdf_timings(sizes, repeats: int = 3):
    out = []
    order_mdf(assemble_Kh(lor_refine(cartesian_mesh(2, 2), 2)).K)  # compile
    for ny in sizes:
        K = assemble_Kh(lor_refine(cartesian_mesh(16, ny), 4)).K
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            order_mdf(K)
            best = min(best, time.perf_counter() - t0)
        out.append((K.shape[0], best))
    return out


def criterion_9(fit_factor: float = 1.3, time_factor: float = 2.0) -> CheckResult:
    def run():
        bad = []
        worst_nnz = 0.0
        meshes = {"cartesian": cartesian_mesh(4, 4), "perturbed": perturbed_mesh(4, 4, 0.2, 0),
                  "strip": anisotropic_strip_mesh(150.0, 6)}
        for name, mesh in meshes.items():
            for p in (1, 2, 3, 5, 8, 12, 16):
                for coeff in ("const", "b4"):
                    topo = lor_refine(mesh, p)
                    K = assemble_Kh(topo, make_coefficient(coeff, mesh, 0)).K
                    worst_nnz = max(worst_nnz, K.nnz / K.shape[0])
                    if K.nnz > 9 * K.shape[0]:
                        bad.append(f"nnz {name} p={p}")
        per = []
        mesh = cartesian_mesh(4, 4)
        for p in range(4, 17):
            op = HighOrderOperator(mesh, p)
            op.flops = 0
            op.apply_Kp(np.ones(op.n_dofs))
            per.append(op.flops / (mesh.n_elements * (p + 1) ** 3))
        fit = max(per) / min(per)
        if fit > fit_factor:
            bad.append(f"flop fit {fit:.2f}")
        tm = _mdf_timings((32, 64, 128, 256))
        norm = [t / (n * math.log(n)) for n, t in tm]
        tfit = max(norm) / min(norm)
        if tfit > time_factor:
            bad.append(f"MDF time fit {tfit:.2f}")
        detail = (f"max nnz/n {worst_nnz:.2f}; flops/(nel (p+1)^3) in [{min(per):.2f}, {max(per):.2f}] "
                  f"(x{fit:.3f}); MDF t/(n log n) spread x{tfit:.2f} over n={[n for n, _ in tm]}")
        if bad:
            detail += "; failed: " + ", ".join(bad)
        return not bad, detail

    return _timed("9 complexity and memory", run)


def manufactured_rates(disc: str, p: int, nxs=(4, 8, 16), eta: float = 10.0, tol: float = 1e-13):
    errs = []
    for nx in nxs:
        rep = run_solve(RunConfig(mesh=f"cartesian:{nx}", p=p, disc=disc, eta=eta, rhs="manufactured",
                                  tol=tol, maxit=2000))
        errs.append(rep.info["l2_error"])
    rates = [math.log(errs[k] / errs[k + 1]) / math.log(nxs[k + 1] / nxs[k]) for k in range(len(errs) - 1)]
    return errs, rates


def criterion_10(margin: float = 0.8) -> CheckResult:
    def run():
        ok, parts = True, []
        for disc in ("cg", "ip"):
            for p in range(1, 5):
                _, rates = manufactured_rates(disc, p)
                ok &= rates[-1] >= p + margin
                parts.append(f"{disc} p={p} rate {rates[-1]:.2f}")
        return ok, ", ".join(parts)

    return _timed("10 manufactured-solution convergence", run)


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


# ------------------------------------------------------------------ quick checks
def _quick_checks() -> list[Callable[[], CheckResult]]:
    def oracle_small():
        return criterion_1(ps=range(1, 5))

    def small_solve():
        def run():
            rep = run_solve(RunConfig(mesh="cartesian:2", p=2))
            return rep.converged and rep.iterations <= 8, f"2x2 p=2 single patch: {rep.iterations} its"
        return _timed("cartesian 2x2 p=2 solve", run)

    def exact_p1():
        def run():
            its = [run_solve(RunConfig(mesh=m, p=1, patches="single", local_solver="exact")).iterations
                   for m in ("cartesian:3", "perturbed:4")]
            return max(its) <= 2, f"p=1 exact patch solves: {its} its"
        return _timed("p=1 exact local solver", run)

    def determinism():
        def run():
            cfg = RunConfig(mesh="perturbed:3", p=4, patches="vertex", coeff="b4", seed=7)
            a, b = run_solve(cfg), run_solve(cfg)
            same = a.iterations == b.iterations and a.residuals == b.residuals
            return same, f"{a.iterations} its, residual histories identical: {same}"
        return _timed("determinism", run)

    def tol_warning():
        def run():
            rep = run_solve(RunConfig(mesh="cartesian:2", p=2, tol=1.0))
            return bool(rep.info["warnings"]) and rep.iterations == 0, f"warnings {rep.info['warnings']}"
        return _timed("suspicious tolerance flagged", run)

    def scaling():
        def run():
            its = []
            for disc in ("cg", "ip"):
                for s in (1.0, 1024.0):
                    cfg = RunConfig(mesh="perturbed:3", p=3, disc=disc, patches="vertex")
                    prob_its = _scaled_iterations(cfg, s)
                    its.append(prob_its)
            return its[0] == its[1] and its[2] == its[3], f"iterations (b, 1024 b) cg {its[:2]} ip {its[2:]}"
        return _timed("coefficient scaling invariance", run)

    def smoother_smoke():
        def run():
            its = {sm: smoother_study_run(8, sm, "gauss-lobatto", tol=1e-10)
                   for sm in ("jacobi", "gauss-seidel", "ilu-natural", "ilu-rcm", "ilu-mdf", "ilu-line")}
            return all(v > 0 for v in its.values()), str(its)
        return _timed("all smoothers converge", run)

    return [oracle_small, small_solve, exact_p1, determinism, tol_warning, scaling, smoother_smoke]


def _scaled_iterations(cfg: RunConfig, s: float) -> int:
    from .experiments import setup_problem
    from .highop import CoefficientField
    from .lor import assemble_coarse
    from .schwarz import SchwarzPreconditioner, build_dg_schwarz, partition_vertices
    from .sparse import pcg

    prob = setup_problem(cfg)
    coeff = CoefficientField("const", s)
    op = HighOrderOperator(prob.mesh, cfg.p, coeff, cfg.disc, cfg.eta if cfg.disc != "cg" else None, topo=prob.topo)
    Kh = assemble_Kh(prob.topo, coeff)
    decomp = partition_vertices(prob.mesh, "vertex")
    B = SchwarzPreconditioner(decomp, prob.topo, Kh, assemble_coarse(prob.mesh, coeff))
    if cfg.disc != "cg":
        B = build_dg_schwarz(B, op)
    _, rep = pcg(op.apply, B, prob.b * s, tol=cfg.tol)
    return rep.iterations


def run_checks(full: bool = False, echo: Callable[[str], None] | None = None) -> list[CheckResult]:
    """Quick self-checks, plus every acceptance criterion when ``full``."""
    results = []
    jobs = _quick_checks() + (CRITERIA if full else [])
    for job in jobs:
        try:
            res = job()
        except Exception as exc:  # report and continue
            res = CheckResult(getattr(job, "__name__", "check"), False, f"{type(exc).__name__}: {exc}")
        results.append(res)
        if echo is not None:
            echo(res.line())
    return results
