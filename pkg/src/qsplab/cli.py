"""Command-line entry point.

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import experiments as ex
from .exceptions import ConfigError, QSPError, ThresholdViolation
from .grid import RadialGrid
from .io import (RunConfig, emit_csv, emit_profile_svg, emit_svg, emit_table, fmt,
                 load_config, read_field, write_field)
from .phi import check_identity, solve_phi

log = logging.getLogger("qsplab")

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2


def _prepare(args) -> tuple[RunConfig, Path]:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig().validate()
    if args.out:
        cfg.out = args.out
    if args.plot:
        cfg.plot = True
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    (out / "config.ini").write_text(cfg.to_ini())
    return cfg, out


def _dump_rows(out: Path, stem: str, g: RadialGrid, records, key: str):
    fields = out / "fields"
    fields.mkdir(exist_ok=True)
    for i, rec in enumerate(records):
        if rec.u is None:
            continue
        meta = {key: rec.param}
        params = rec.extras.get("params")
        if params is not None:
            meta.update(lam=params.lam, eps=params.eps, T=params.T)
        write_field(fields / f"{stem}_{i:02d}.txt", g, rec.u, name="u", meta=meta)


def _report(records, label):
    for rec in records:
        flag = "ok" if rec.converged else "NOT CONVERGED"
        print(f"{label} = {rec.param:<10g} level {rec.level:.6g}  |u|_H1 {rec.h1_norm:.6g}  "
              f"|phi|_X {rec.x_norm:.6g}  |phi|_inf {rec.phi_inf:.6g}  "
              f"grad {rec.grad_norm:.2e}  {flag}")


def _decreasing(values) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.isfinite(v)) and np.all(np.diff(v) < 0))


# --- subcommands ----------------------------------------------------------------

def cmd_solve_phi(args) -> int:
    cfg, out = _prepare(args)
    g = cfg.grid()
    if args.rho:
        gr, rho = read_field(args.rho)
        if (gr.R, gr.N) != (g.R, g.N):
            raise ConfigError(f"source grid (R={gr.R:g}, N={gr.N}) does not match the "
                              f"config grid (R={g.R:g}, N={g.N})")
    else:
        rho = g.sample(lambda r: np.exp(-r * r))
    sol = solve_phi(g, rho, cfg.params.eps)
    write_field(out / "phi.txt", g, sol.phi, name="phi", meta={"eps": cfg.params.eps})
    rows = [("iterations", float(sol.iterations)), ("residual", sol.residual),
            ("dirichlet2", sol.dirichlet2), ("dirichlet4", sol.dirichlet4),
            ("x_norm", sol.x_norm), ("phi_inf", sol.max_abs), ("min_phi", sol.min_value),
            ("identity_defect", check_identity(sol))]
    emit_table(out / "phi_summary.csv", ("quantity", "value"), rows)
    if cfg.plot:
        emit_profile_svg(out / "phi.svg", g, {"phi": sol.phi}, title=f"eps = {cfg.params.eps:g}")
    for name, val in rows:
        print(f"{name:16s} {val:.6g}")
    if not sol.converged:
        log.error("potential solve did not converge (residual %.3e)", sol.residual)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg, out = _prepare(args)
    g = cfg.grid()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ThresholdViolation)
        cp = ex.solve_single(cfg)
    for w in caught:
        log.warning("%s", w.message)
    rec = ex.to_record(cp, cfg.params.lam, cfg.record_timing)
    emit_csv([rec], out / "solve.csv")
    meta = {"lam": cfg.params.lam, "eps": cfg.params.eps, "T": cp.T}
    write_field(out / "u.txt", g, cp.u, name="u", meta=meta)
    if cp.phi is not None:
        write_field(out / "phi.txt", g, cp.phi.phi, name="phi", meta=meta)
    if cfg.plot:
        series = {"u": cp.u}
        if cp.phi is not None:
            series["phi"] = cp.phi.phi
        emit_profile_svg(out / "solution.svg", g, series,
                         title=f"lambda = {cfg.params.lam:g}, eps = {cfg.params.eps:g}")
    _report([rec], "lambda")
    thr = cp.thresholds
    print(f"T = {cp.T:g}, |u|_H1 <= T: {cp.promoted}; thresholds: Sobolev "
          f"{thr.sobolev_bound:.6g}, truncation {thr.truncation_bound:.6g}; "
          f"below both: {cp.below_thresholds}")
    return EXIT_OK if cp.converged else EXIT_NUMERIC


def cmd_sweep_lambda(args) -> int:
    cfg, out = _prepare(args)
    g = cfg.grid()
    rows = []

    def persist(rec):
        rows.append(rec)
        emit_csv(rows, out / "lambda_sweep.csv")

    records = ex.sweep_lambda(cfg, on_record=persist)
    _dump_rows(out, "lambda", g, records, "lam")
    _report(records, "lambda")
    conv = [r for r in records if r.converged]
    ok = len(conv) == len(records)
    if ok:
        print(f"decreasing |u|_H1: {_decreasing([r.h1_norm for r in conv])}, "
              f"|phi|_X: {_decreasing([r.x_norm for r in conv])}, "
              f"|phi|_inf: {_decreasing([r.phi_inf for r in conv])}, "
              f"level: {_decreasing([r.level for r in conv])}; "
              f"last/first |u|_H1 = {conv[-1].h1_norm / conv[0].h1_norm:.4f}")
    if cfg.envelope_eps:
        sweeps = {cfg.params.eps: records} if cfg.params.eps in cfg.envelope_eps else {}
        env = ex.level_envelope(cfg, sweeps)
        header = ["param", "sup_level"] + [f"level_eps_{fmt(e)}" for e in env.epsilons]
        emit_table(out / "level_envelope.csv", header, env.rows())
        ok = ok and bool(env.converged.all())
        print(f"sup over eps in {list(env.epsilons)} of the level decreasing: "
              f"{_decreasing(env.sup_level)}")
    if cfg.plot:
        emit_svg(records, out / "lambda_sweep.svg", "param",
                 ("h1_norm", "x_norm", "phi_inf", "level"), title="lambda sweep")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_sweep_epsilon(args) -> int:
    cfg, out = _prepare(args)
    g = cfg.grid()
    rows = []

    def persist(rec):
        rows.append(rec)
        emit_csv(rows, out / "epsilon_sweep.csv")

    base, records = ex.sweep_epsilon(cfg, on_record=persist)
    _dump_rows(out, "epsilon", g, [base, *records], "eps")
    emit_table(out / "epsilon_convergence.csv", ("param", "du_h1", "dphi_grad2", "eps_grad4"),
               [[r.param, r.extras["du_h1"], r.extras["dphi_grad2"], r.extras["eps_grad4"]]
                for r in records])
    _report([base, *records], "eps")
    for r in records:
        print(f"eps = {r.param:<6g} |u-u0|_H1 {r.extras['du_h1']:.3e}  "
              f"|grad(phi-phi0)|_2 {r.extras['dphi_grad2']:.3e}  "
              f"eps |grad phi|_4 {r.extras['eps_grad4']:.3e}")
    if cfg.plot:
        emit_svg(records, out / "epsilon_sweep.svg", "param",
                 ("du_h1", "dphi_grad2", "eps_grad4"), title="eps sweep")
    return EXIT_OK if all(r.converged for r in records) else EXIT_NUMERIC


def cmd_supercritical(args) -> int:
    cfg, out = _prepare(args)
    g = cfg.grid()
    rows = []

    def persist(rec):
        rows.append(rec)
        emit_csv(rows, out / "supercritical.csv")

    rep = ex.run_supercritical(cfg, on_record=persist)
    _dump_rows(out, "supercritical", g, rep.records, "lam")
    _report(rep.records, "lambda")
    lines = [f"p = {fmt(rep.p)}", f"K = {fmt(rep.K)}", rep.summary()]
    (out / "supercritical_report.txt").write_text("\n".join(lines) + "\n")
    print(rep.summary())
    if cfg.plot:
        emit_svg(rep.records, out / "supercritical.svg", "param", ("u_inf", "h1_norm"),
                 title=f"capped problem, p = {rep.p:g}, K = {rep.K:g}")
    if not rep.certified:
        return EXIT_NUMERIC
    return EXIT_OK if rep.residual <= 10 * rep.tol else EXIT_NUMERIC


def cmd_check(args) -> int:
    _, out = _prepare(args)
    rep = ex.invariant_suite(quick=args.quick)
    lines = [c.line() for c in rep.items]
    summary = (f"{len(rep.items) - len(rep.failures)}/{len(rep.items)} checks passed "
               f"in {rep.seconds:.1f} s")
    (out / "check_report.txt").write_text("\n".join(lines + [summary]) + "\n")
    for line in lines:
        print(line)
    print(summary)
    return EXIT_OK if rep.ok else EXIT_NUMERIC


# --- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    common.add_argument("--plot", action="store_true", help="also write SVG charts")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(
        prog="qsplab", description="Quasilinear Schrodinger-Poisson numerical lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-phi", parents=[common], help="solve the potential equation")
    p.add_argument("--config", required=True)
    p.add_argument("--rho", metavar="FILE", help="source field dump (default exp(-r^2))")
    p.set_defaults(func=cmd_solve_phi)

    for name, func, text in (
            ("solve", cmd_solve, "one mountain-pass run"),
            ("sweep-lambda", cmd_sweep_lambda, "lambda sweep and level envelope"),
            ("sweep-epsilon", cmd_sweep_epsilon, "eps sweep against the eps = 0 baseline"),
            ("supercritical", cmd_supercritical, "capped supercritical problem")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--config", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("check", parents=[common], help="run the invariant suite")
    p.add_argument("--quick", action="store_true", help="skip the mountain-pass run")
    p.add_argument("--config", help="optional; only its output settings are used")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (QSPError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
