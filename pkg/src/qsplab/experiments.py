"""Experiment drivers: lambda and eps sweeps, the supercritical run, the invariant suite."""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .energy import (SOBOLEV_EXACT, EnergyFunctional, default_profile, sobolev_constant)
from .exceptions import ConfigError, QSPError, ThresholdViolation
from .grid import (RadialGrid, build_uniform, inner_h1, norm_h1, seminorm_grad_lp,
                   solve_helmholtz, volume_integral)
from .io import RunConfig, SweepRecord
from .model import (ModelParams, F_eval, GK_eval, f_eval, gk_eval, psi_prime, validate)
from .mountain_pass import CriticalPoint, MPAOptions, run
from .phi import check_identity, green_potential, phi_energy, phi_energy_gradient, solve_phi

log = logging.getLogger(__name__)


def options(cfg: RunConfig, tol: float | None = None) -> MPAOptions:
    return MPAOptions(n_path=cfg.n_path, tol=cfg.tol if tol is None else tol,
                      max_iter=cfg.max_iter)


def to_record(cp: CriticalPoint, param: float, timing: bool = True) -> SweepRecord:
    phi = cp.phi
    return SweepRecord(
        param=float(param), level=cp.level, h1_norm=cp.h1_norm,
        x_norm=phi.x_norm if phi is not None else 0.0,
        phi_inf=phi.max_abs if phi is not None else 0.0,
        u_inf=float(np.abs(cp.u).max()), grad_norm=cp.grad_norm,
        converged=cp.converged, seconds=cp.seconds if timing else 0.0, u=cp.u,
        extras={"T": cp.T, "below_thresholds": cp.below_thresholds,
                "untruncated_grad_norm": cp.untruncated_grad_norm, "iterations": cp.iterations,
                "point": cp})


def failed_record(param: float, g: RadialGrid, exc: Exception) -> SweepRecord:
    nan = float("nan")
    return SweepRecord(param=float(param), level=nan, h1_norm=nan, x_norm=nan, phi_inf=nan,
                       u_inf=nan, grad_norm=nan, converged=False, seconds=0.0,
                       u=np.zeros(g.size), extras={"error": str(exc)})


def _solve_row(g, m, opts, warm, param, timing):
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ThresholdViolation)
            cp = run(g, m, opts, warm_start=warm)
    except QSPError as exc:
        log.error("row %g failed: %s", param, exc)
        return failed_record(param, g, exc)
    rec = to_record(cp, param, timing)
    rec.extras["params"] = m.replace(T=cp.T)
    # threshold warnings are kept with the row rather than repeated per sweep point
    rec.extras["warnings"] = [w.message for w in caught
                              if issubclass(w.category, ThresholdViolation)]
    for msg in rec.extras["warnings"]:
        log.info("row %g: %s", param, msg)
    return rec


def solve_single(cfg: RunConfig) -> CriticalPoint:
    """One mountain-pass run at the configured parameters."""
    return run(cfg.grid(), cfg.params, options(cfg))


def sweep_lambda(cfg: RunConfig, eps: float | None = None, on_record=None) -> list:
    """One record per lambda in ``cfg.lambdas`` at fixed eps.

    Each run after the first starts from the previous converged solution.
    Failed rows are kept (flagged) and break the warm-start chain.
    """
    g = cfg.grid()
    base = cfg.params if eps is None else cfg.params.replace(eps=eps)
    opts = options(cfg)
    warm = None
    out = []
    for lam in cfg.lambdas:
        rec = _solve_row(g, base.replace(lam=lam), opts, warm, lam, cfg.record_timing)
        rec.extras["eps"] = base.eps
        out.append(rec)
        if on_record:
            on_record(rec)
        warm = rec.u if (cfg.warm_start and rec.converged) else None
    return out


@dataclass
class Envelope:
    """Levels on a (lambda, eps) grid and their sup over eps for each lambda."""

    lambdas: tuple
    epsilons: tuple
    levels: np.ndarray
    converged: np.ndarray

    @property
    def sup_level(self) -> np.ndarray:
        return self.levels.max(axis=1)

    def rows(self):
        for i, lam in enumerate(self.lambdas):
            yield [lam, self.sup_level[i], *self.levels[i]]


def level_envelope(cfg: RunConfig, sweeps: dict | None = None) -> Envelope:
    """``sup_eps c(lam, eps)`` over ``cfg.envelope_eps``; reuses any precomputed sweeps."""
    sweeps = dict(sweeps or {})
    for eps in cfg.envelope_eps:
        if eps not in sweeps:
            sweeps[eps] = sweep_lambda(cfg, eps=eps)
    eps_list = tuple(cfg.envelope_eps)
    levels = np.array([[sweeps[e][i].level for e in eps_list]
                       for i in range(len(cfg.lambdas))])
    conv = np.array([[sweeps[e][i].converged for e in eps_list]
                     for i in range(len(cfg.lambdas))])
    return Envelope(tuple(cfg.lambdas), eps_list, levels, conv)


def sweep_epsilon(cfg: RunConfig, on_record=None):
    """Baseline at eps = 0 and one record per eps in ``cfg.epsilons``.

    Uses ``cfg.eps_tol`` because the differences to the baseline shrink like
    eps^4 and must stay above the solver's own error.  Each record's extras
    hold ``du_h1``, ``dphi_grad2`` and ``eps_grad4``.

    Returns
    -------
    (baseline, records)
    """
    g = cfg.grid()
    opts = options(cfg, tol=cfg.eps_tol)
    base = _solve_row(g, cfg.params.replace(eps=0.0), opts, None, 0.0, cfg.record_timing)
    if on_record:
        on_record(base)
    if not base.converged:
        raise QSPError(f"eps = 0 baseline failed: {base.extras.get('error', 'not converged')}")
    phi0 = base.extras["point"].phi.phi
    out = []
    warm = base.u
    for eps in cfg.epsilons:
        rec = _solve_row(g, cfg.params.replace(eps=eps), opts,
                         warm if cfg.warm_start else None, eps, cfg.record_timing)
        if rec.converged:
            sol = rec.extras["point"].phi
            rec.extras.update(
                du_h1=norm_h1(g, rec.u - base.u),
                dphi_grad2=seminorm_grad_lp(g, sol.phi - phi0, 2),
                eps_grad4=eps * sol.dirichlet4**0.25)
        else:
            rec.extras.update(du_h1=np.nan, dphi_grad2=np.nan, eps_grad4=np.nan)
        out.append(rec)
        if on_record:
            on_record(rec)
    return base, out


# --- supercritical ------------------------------------------------------------

def supercritical_residual(g: RadialGrid, m: ModelParams, u) -> float:
    """H^1-dual norm of ``-Lap u + u + phi u - lam f(u) - |u|^(p-2) u``.

    Evaluated with the uncapped power, independently of the functional's
    gradient code, so it certifies ``u`` only where ``|u| <= K`` held anyway.
    """
    if m.p is None:
        raise ConfigError("supercritical residual needs p")
    u = np.asarray(u, dtype=float).copy()
    u[-1] = 0.0
    phi = solve_phi(g, u * u, m.eps, raise_on_failure=True).phi
    d = np.diff(u) / g.dr
    flux = g.half_weights * d / g.dr
    weak = np.zeros(g.size)
    weak[:-1] -= flux
    weak[1:] += flux
    weak += g.vol_weights * (u + phi * u - m.lam * f_eval(m, g.nodes, u)
                             - np.abs(u) ** (m.p - 2.0) * u)
    strong = np.zeros(g.size)
    strong[:-1] = weak[:-1] / g.vol_weights[:-1]
    return norm_h1(g, solve_helmholtz(g, strong))


@dataclass
class SupercriticalReport:
    p: float
    K: float
    records: list
    certified_lambda: float | None = None
    residual: float | None = None
    tol: float = 1e-6

    @property
    def certified(self) -> bool:
        return self.certified_lambda is not None

    def summary(self) -> str:
        if not self.certified:
            return (f"no lambda in the grid gave |u|_inf <= K = {self.K:g}; "
                    "nothing certified")
        return (f"certified at lambda = {self.certified_lambda:g}: |u|_inf <= K = {self.K:g}, "
                f"direct residual {self.residual:.3e} (bound {10 * self.tol:.1e})")


def run_supercritical(cfg: RunConfig, on_record=None) -> SupercriticalReport:
    """Capped problem along ``cfg.super_lambdas``; certify the first row with ``|u|_inf <= K``."""
    g = cfg.grid()
    m = cfg.params.replace(p=cfg.super_p, K=cfg.super_K)
    m.require_valid()
    opts = options(cfg)
    rep = SupercriticalReport(p=m.p, K=m.K, records=[], tol=cfg.tol)
    warm = None
    for lam in cfg.super_lambdas:
        mm = m.replace(lam=lam)
        rec = _solve_row(g, mm, opts, warm, lam, cfg.record_timing)
        rep.records.append(rec)
        if on_record:
            on_record(rec)
        warm = rec.u if (cfg.warm_start and rec.converged) else None
        if rec.converged:
            rec.extras["residual"] = supercritical_residual(g, mm, rec.u)
            if rep.certified_lambda is None and rec.u_inf <= m.K:
                rep.certified_lambda = lam
                rep.residual = rec.extras["residual"]
    return rep


# --- re-verification ----------------------------------------------------------

def reverify(rec: SweepRecord, g: RadialGrid, m: ModelParams | None = None, u=None) -> dict:
    """Relative gaps between stored diagnostics and values recomputed from ``u``.

    ``m`` defaults to the parameters the row was solved with.
    """
    u = rec.u if u is None else u
    m = m or rec.extras["params"]
    fn = EnergyFunctional(g, m)
    sol = fn.phi(u) if np.any(u) else None
    fresh = {
        "level": fn.value(u),
        "h1_norm": norm_h1(g, u),
        "x_norm": sol.x_norm if sol else 0.0,
        "phi_inf": sol.max_abs if sol else 0.0,
        "u_inf": float(np.abs(u).max()),
        "grad_norm": fn.grad_norm(u),
    }
    return {k: abs(getattr(rec, k) - v) / max(abs(v), 1e-300) for k, v in fresh.items()}


# --- invariant suite ----------------------------------------------------------

def gaussian_source(r, eps: float):
    """Source whose exact potential is ``exp(-r^2)``."""
    r = np.asarray(r, dtype=float)
    r2 = r * r
    return (6.0 - 4.0 * r2) * np.exp(-r2) + eps**4 * (40.0 * r2 - 48.0 * r2 * r2) * np.exp(-3.0 * r2)


@dataclass
class CheckResult:
    module: str
    prop: str
    observed: str
    required: str
    passed: bool

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.module}: {self.prop} (observed {self.observed}, required {self.required})"


@dataclass
class SuiteReport:
    items: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.items)

    @property
    def failures(self) -> list:
        return [c for c in self.items if not c.passed]

    def add(self, module, prop, value, bound, passed, fmt="{:.3e}"):
        obs = fmt.format(value) if isinstance(value, (int, float, np.floating)) else str(value)
        self.items.append(CheckResult(module, prop, obs, bound, bool(passed)))


def _rel_fd(fn, deriv, h=1e-6):
    fd = (fn(h) - fn(-h)) / (2 * h)
    return abs(fd - deriv) / max(abs(deriv), 1e-12)


def invariant_suite(grid: RadialGrid | None = None, params: ModelParams | None = None,
                    quick: bool = False, seed: int = 0) -> SuiteReport:
    """Run every module's property checks on a small grid (default N = 800, R = 15).

    ``quick`` skips the mountain-pass run.  Each check that raises is
    recorded as a failure with the exception text.
    """
    t0 = time.perf_counter()
    g = grid or build_uniform(15.0, 800)
    m = params or ModelParams()
    rng = np.random.default_rng(seed)
    rep = SuiteReport()
    r = g.nodes

    def guarded(module, prop, bound, check):
        try:
            check()
        except Exception as exc:  # noqa: BLE001 - every failure must be itemized
            rep.add(module, prop, f"{type(exc).__name__}: {exc}", bound, False)

    # grid
    def quad():
        ball = 4.0 / 3.0 * np.pi * g.R**3
        err = abs(g.vol_weights.sum() - ball) / ball
        rep.add("radial_grid", "volume weights sum to the ball volume", err, "<= 1e-12", err <= 1e-12)
        gauss = volume_integral(g, np.exp(-r * r))
        err = abs(gauss - np.pi**1.5) / np.pi**1.5
        rep.add("radial_grid", "Gaussian quadrature", err, "<= 1e-3", err <= 1e-3)
        hw = g.half_weights.sum()
        err = abs(hw - 4 * np.pi * g.R**3 / 3) / (4 * np.pi * g.R**3 / 3)
        rep.add("radial_grid", "flux weights integrate r^2", err, "<= 1e-4", err <= 1e-4)
    guarded("radial_grid", "quadrature", "exact", quad)

    # model
    def model_checks():
        report = validate(m)
        rep.add("model", "hypotheses (f0)-(f3)", ", ".join(report.failures) or "all pass",
                "all pass", report.ok)
        t = rng.uniform(0.1, 3.0, 20)
        rr = rng.uniform(0.0, 5.0, 20)
        h = 1e-5
        dF = (F_eval(m, rr, t + h) - F_eval(m, rr, t - h)) / (2 * h)
        err = float(np.max(np.abs(dF - f_eval(m, rr, t)) / np.abs(f_eval(m, rr, t))))
        rep.add("model", "F' = f", err, "<= 1e-6", err <= 1e-6)
        mk = m.replace(p=7.0, K=1.0)
        dG = (GK_eval(mk, rr, t + h) - GK_eval(mk, rr, t - h)) / (2 * h)
        err = float(np.max(np.abs(dG - gk_eval(mk, rr, t)) / np.abs(gk_eval(mk, rr, t))))
        rep.add("model", "GK' = g_K", err, "<= 1e-6", err <= 1e-6)
        s = np.linspace(-1, 4, 501)
        rep.add("model", "psi' <= 0", float(psi_prime(s).max()), "<= 0", psi_prime(s).max() <= 0)
    guarded("model", "hypotheses", "pass", model_checks)

    # phi solver
    u_test = np.exp(-0.5 * r * r)
    u_test[-1] = 0.0
    rho = u_test**2

    def phi_checks():
        sol0 = solve_phi(g, rho, 0.0)
        oracle = green_potential(g, rho)
        gap = np.abs(sol0.phi - oracle).max() / np.abs(oracle).max()
        rep.add("phi_solver", "eps = 0 oracle gap", gap, "<= 1e-2", gap <= 1e-2)
        for eps in (0.0, 0.5, 1.0):
            sol = solve_phi(g, rho, eps)
            rep.add("phi_solver", f"converged (eps={eps:g})", sol.residual, "<= 1e-10",
                    sol.converged)
            ident = check_identity(sol)
            rep.add("phi_solver", f"energy identity (eps={eps:g})", ident, "<= 1e-8",
                    ident <= 1e-8)
            neg = sol.min_value / sol.max_abs
            rep.add("phi_solver", f"positivity (eps={eps:g})", neg, ">= -1e-10", neg >= -1e-10)
        sol1 = solve_phi(g, rho, 1.0)
        ok = (phi_energy(g, sol1.phi, rho, 1.0) <= phi_energy(g, sol0.phi, rho, 1.0)
              and phi_energy(g, sol0.phi, rho, 0.0) <= phi_energy(g, sol1.phi, rho, 0.0))
        rep.add("phi_solver", "minimality against the other eps", str(ok), "True", ok)
        v = rng.standard_normal(g.size) * np.exp(-0.1 * r)
        v[-1] = 0.0
        # away from the minimizer, where the derivative is not swamped by cancellation
        base = 0.5 * sol1.phi + 0.1 * v
        deriv = float(np.dot(phi_energy_gradient(g, base, rho, 1.0), v))
        err = _rel_fd(lambda h: phi_energy(g, base + h * v, rho, 1.0), deriv, 1e-5)
        rep.add("phi_solver", "energy gradient vs central differences", err, "<= 1e-5",
                err <= 1e-5)
    guarded("phi_solver", "solver properties", "pass", phi_checks)

    def manufactured():
        for eps in (0.0, 0.7):
            errs = []
            for N in (200, 400):
                gg = build_uniform(g.R, N)
                sol = solve_phi(gg, gaussian_source(gg.nodes, eps), eps)
                exact = np.exp(-gg.nodes**2) - np.exp(-gg.R**2)
                errs.append(np.abs(sol.phi - exact).max())
            ratio = errs[0] / errs[1]
            rep.add("phi_solver", f"manufactured error ratio (eps={eps:g})", ratio,
                    "in [3, 5]", 3 <= ratio <= 5)
    guarded("phi_solver", "manufactured solution", "order 2", manufactured)

    # energy
    def energy_checks():
        fn = EnergyFunctional(g, m)
        for trunc in (False, True):
            worst = 0.0
            for _ in range(5):
                u = np.abs(rng.standard_normal(g.size)) * np.exp(-0.3 * r) * 1.5
                u[-1] = 0.0
                v = rng.standard_normal(g.size) * np.exp(-0.2 * r)
                v[-1] = 0.0
                grad = fn.gradient(u, trunc)
                deriv = inner_h1(g, grad, v)
                worst = max(worst, _rel_fd(lambda h: fn.value(u + h * v, trunc), deriv))
            name = "grad_J_trunc" if trunc else "grad_J"
            rep.add("energy", f"{name} vs central differences", worst, "<= 1e-4", worst <= 1e-4)
        fn0 = EnergyFunctional(g, m.replace(eps=0.0))
        p1, p2 = fn0.phi(u_test).phi, fn0.phi(2.0 * u_test).phi
        dev = np.abs(p2 - 4.0 * p1).max() / (4.0 * np.abs(p1).max())
        rep.add("energy", "eps = 0 homogeneity", dev, "<= 1e-8", dev <= 1e-8)
        fn1 = EnergyFunctional(g, m.replace(eps=1.0))
        p1, p2 = fn1.phi(u_test).phi, fn1.phi(2.0 * u_test).phi
        dev = np.abs(p2 - 4.0 * p1).max() / (4.0 * np.abs(p1).max())
        rep.add("energy", "eps = 1 homogeneity violated", dev, "> 1e-3", dev > 1e-3)
        v = default_profile(g)
        t = 0.7
        sol = fn.phi(t * v)
        exact = t * float(np.dot(g.vol_weights, sol.phi * v * v))
        err = _rel_fd(lambda h: fn.I_eps((t + h) * v), exact, 1e-5)
        rep.add("energy", "fiber derivative of I_eps", err, "<= 1e-4", err <= 1e-4)
        S = sobolev_constant()
        err = abs(S - SOBOLEV_EXACT) / SOBOLEV_EXACT
        rep.add("energy", "Sobolev constant", err, "<= 1e-2", err <= 1e-2)
    guarded("energy", "functional properties", "pass", energy_checks)

    # mountain pass
    def mp_checks():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ThresholdViolation)
            cp = run(g, m)
        scale = max(1.0, cp.h1_norm)
        rep.add("mountain_pass", "converged", cp.grad_norm, f"<= {1e-6 * scale:.3e}",
                cp.converged and cp.grad_norm <= 1e-6 * scale)
        rep.add("mountain_pass", "level > 0", cp.level, "> 0", cp.level > 0)
        neg = cp.min_u / cp.max_u
        rep.add("mountain_pass", "nonnegativity", neg, ">= -1e-6", neg >= -1e-6)
        fn = EnergyFunctional(g, m.replace(T=cp.T))
        dec = abs(fn.theta_decomposition(cp.u) - cp.level) / abs(cp.level)
        rep.add("mountain_pass", "theta decomposition", dec, "<= 1e-6", dec <= 1e-6)
        if cp.promoted:
            rep.add("mountain_pass", "untruncated gradient", cp.untruncated_grad_norm,
                    "<= 2e-6", cp.untruncated_grad_norm <= 2e-6)
        ident = check_identity(cp.phi)
        rep.add("mountain_pass", "potential identity", ident, "<= 1e-8", ident <= 1e-8)
    if not quick:
        guarded("mountain_pass", "critical point contract", "pass", mp_checks)

    rep.seconds = time.perf_counter() - t0
    return rep
