"""Problem data: power-sum nonlinearity, supercritical cap, cutoff and truncation."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence, Union

import numpy as np

from .exceptions import ConfigError

CRITICAL_EXPONENT = 6.0

Coefficient = Union[float, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class PowerTerm:
    """One term ``C(r) * t_+^(q-1)`` of the nonlinearity.

    ``C`` is either a nonnegative constant or a callable radial profile.
    """

    C: Coefficient = 1.0
    q: float = 5.0

    def coefficient(self, r):
        if callable(self.C):
            return np.asarray(self.C(r), dtype=float)
        return float(self.C)


@dataclass(frozen=True)
class ModelParams:
    lam: float = 30.0
    eps: float = 0.5
    T: float = 3.0
    theta: float = 5.0
    terms: tuple = (PowerTerm(),)
    p: float | None = None
    K: float | None = None
    crit: float = field(default=CRITICAL_EXPONENT, init=False)

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    @property
    def supercritical(self) -> bool:
        return self.p is not None

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def require_valid(self) -> "ModelParams":
        """Raise ConfigError listing every failed hypothesis."""
        report = validate(self)
        if not report.ok:
            raise ConfigError("; ".join(report.failures))
        return self


# --- nonlinearity -----------------------------------------------------------

def f_eval(m: ModelParams, r, t):
    """``sum_i C_i(r) t_+^(q_i - 1)``."""
    tp = np.maximum(np.asarray(t, dtype=float), 0.0)
    out = np.zeros(np.broadcast(np.asarray(r), tp).shape)
    for term in m.terms:
        out = out + term.coefficient(r) * tp ** (term.q - 1.0)
    return out if out.ndim else float(out)


def F_eval(m: ModelParams, r, t):
    """Primitive of :func:`f_eval` vanishing at ``t = 0``."""
    tp = np.maximum(np.asarray(t, dtype=float), 0.0)
    out = np.zeros(np.broadcast(np.asarray(r), tp).shape)
    for term in m.terms:
        out = out + term.coefficient(r) * tp**term.q / term.q
    return out if out.ndim else float(out)


def f_prime_eval(m: ModelParams, r, t):
    tp = np.maximum(np.asarray(t, dtype=float), 0.0)
    out = np.zeros(np.broadcast(np.asarray(r), tp).shape)
    for term in m.terms:
        out = out + term.coefficient(r) * (term.q - 1.0) * tp ** (term.q - 2.0)
    return out if out.ndim else float(out)


def _require_cap(m: ModelParams):
    if m.p is None or m.K is None:
        raise ConfigError("supercritical evaluation needs both p and K")


def gk_eval(m: ModelParams, r, t):
    """Capped supercritical nonlinearity.

    Equals ``lam f + |t|^(p-2) t`` for ``|t| <= K`` and
    ``lam f + K^(p-6) |t|^4 t`` beyond, so it grows critically.
    """
    _require_cap(m)
    t = np.asarray(t, dtype=float)
    a = np.abs(t)
    power = np.where(a <= m.K, a ** (m.p - 2.0), m.K ** (m.p - 6.0) * a**4) * t
    out = m.lam * f_eval(m, r, t) + power
    return out if np.ndim(out) else float(out)


def GK_eval(m: ModelParams, r, t):
    """Primitive of :func:`gk_eval` vanishing at ``t = 0``."""
    _require_cap(m)
    t = np.asarray(t, dtype=float)
    a = np.abs(t)
    K, p = m.K, m.p
    below = a**p / p
    above = K**p / p + K ** (p - 6.0) * (a**6 - K**6) / 6.0
    out = m.lam * F_eval(m, r, t) + np.where(a <= K, below, above)
    return out if np.ndim(out) else float(out)


def power_part(m: ModelParams, t):
    """Pure-power part of the nonlinearity and its primitive, ``(g, G)``.

    For the critical problem this is ``(|t|^4 t, |t|^6 / 6)``; with a
    supercritical cap it is the capped power of :func:`gk_eval`.
    """
    t = np.asarray(t, dtype=float)
    a = np.abs(t)
    if not m.supercritical:
        return a**4 * t, a**6 / 6.0
    K, p = m.K, m.p
    g = np.where(a <= K, a ** (p - 2.0), K ** (p - 6.0) * a**4) * t
    G = np.where(a <= K, a**p / p, K**p / p + K ** (p - 6.0) * (a**6 - K**6) / 6.0)
    return g, G


def power_part_prime(m: ModelParams, t):
    a = np.abs(np.asarray(t, dtype=float))
    if not m.supercritical:
        return 5.0 * a**4
    K, p = m.K, m.p
    return np.where(a <= K, (p - 1.0) * a ** (p - 2.0), 5.0 * K ** (p - 6.0) * a**4)


# --- cutoff -----------------------------------------------------------------

def psi(t):
    """C^1 cutoff: 1 on [0, 1], cubic smoothstep down to 0 on [1, 2], 0 after."""
    t = np.asarray(t, dtype=float)
    s = np.clip(t - 1.0, 0.0, 1.0)
    out = 1.0 - 3.0 * s**2 + 2.0 * s**3
    return out if out.ndim else float(out)


def psi_prime(t):
    t = np.asarray(t, dtype=float)
    s = np.clip(t - 1.0, 0.0, 1.0)
    out = -6.0 * s + 6.0 * s**2
    return out if out.ndim else float(out)


def h_T(m: ModelParams, u_norm_sq: float) -> float:
    """Truncation factor ``psi(||u||^2 / T^2)``."""
    return float(psi(u_norm_sq / m.T**2))


def h_T_factor(m: ModelParams, u_norm_sq: float) -> float:
    """Derivative factor ``(2/T^2) psi'(||u||^2 / T^2)`` multiplying <u, v>."""
    return float(2.0 / m.T**2 * psi_prime(u_norm_sq / m.T**2))


# --- hypotheses -------------------------------------------------------------

@dataclass
class ValidationReport:
    checks: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def record(self, name, passed, detail=""):
        self.checks[name] = bool(passed)
        if not passed:
            self.failures.append(f"{name}: {detail}" if detail else name)


def validate(m: ModelParams, r_probe: Sequence[float] = (0.0, 1.0, 5.0)) -> ValidationReport:
    """Check the parameter invariants and spot-check (f0)-(f3) on grids of t.

    Never raises; inspect ``report.ok`` and ``report.failures``.
    """
    rep = ValidationReport()
    finite = all(np.isfinite(x) for x in (m.lam, m.eps, m.T, m.theta))
    rep.record("finite", finite, "non-finite parameter")
    rep.record("lambda", m.lam > 0, f"lambda must be positive, got {m.lam}")
    rep.record("eps", m.eps >= 0, f"eps must be nonnegative, got {m.eps}")
    rep.record("T", m.T > 0, f"T must be positive, got {m.T}")
    rep.record("theta", 4.0 < m.theta < m.crit,
               f"theta must lie in (4, 6), got {m.theta}")
    if not m.terms:
        rep.record("terms", False, "at least one power term is required")
        return rep
    qs = [t.q for t in m.terms]
    rep.record("theta<=q", m.theta <= min(qs) + 1e-15,
               f"theta={m.theta} exceeds min q={min(qs)}")
    r = np.asarray(r_probe, dtype=float)
    coeff_ok = all(np.all(np.isfinite(t.coefficient(r))) and np.all(t.coefficient(r) >= 0)
                   for t in m.terms)
    rep.record("C>=0", coeff_ok, "coefficients must be finite and nonnegative")
    if m.p is not None or m.K is not None:
        ok = m.p is not None and m.K is not None and m.p > m.crit and m.K > 0
        rep.record("supercritical", ok, f"need p > 6 and K > 0, got p={m.p}, K={m.K}")
    if not (finite and coeff_ok):
        return rep

    rr = r[:, None]
    tneg = -np.logspace(-3, 3, 25)
    rep.record("f0", np.all(f_eval(m, rr, tneg[None, :]) == 0.0),
               "f must vanish for t <= 0")
    t_small = np.logspace(-8, -4, 9)
    ratio = f_eval(m, rr, t_small[None, :]) / t_small
    vanishing = np.all(np.diff(ratio, axis=1) >= 0) and np.all(
        (ratio[:, 0] <= 0.5 * ratio[:, -1]) | (ratio[:, -1] == 0.0))
    rep.record("f1", bool(vanishing), "f(t)/t does not vanish as t -> 0")
    q_max = max(qs)
    f2_ok = all(2.0 < q < m.crit for q in qs)
    if f2_ok:
        # with q_max < q_test < 6 the ratio f/t^(q_test-1) must decay
        q_test = 0.5 * (q_max + m.crit)
        t_big = np.logspace(3, 8, 11)
        decay = f_eval(m, rr, t_big[None, :]) / t_big ** (q_test - 1.0)
        f2_ok = bool(np.all(np.diff(decay, axis=1) <= 0) and np.all(np.isfinite(decay)))
    rep.record("f2", f2_ok, f"exponents must lie in (2, 6), got {qs}")
    t_grid = np.logspace(-4, 4, 81)
    F = F_eval(m, rr, t_grid[None, :])
    tf = t_grid * f_eval(m, rr, t_grid[None, :])
    positive = np.all(F > 0) if all(np.all(t.coefficient(r) > 0) for t in m.terms) else np.all(F >= 0)
    ar = np.all(m.theta * F <= tf * (1 + 1e-12))
    rep.record("f3", bool(positive and ar and 4.0 < m.theta < m.crit),
               "Ambrosetti-Rabinowitz condition fails")
    return rep
