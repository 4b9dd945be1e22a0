"""Reduced functional J, its truncation J^T, H^1 gradients and level diagnostics.

With ``phi = phi_eps(u)`` the potential generated by ``rho = u^2``::

    I_eps(u) = 1/4 int |grad phi|^2 + 3 eps^4/8 int |grad phi|^4
    J(u)     = 1/2 ||u||^2 + I_eps(u) - lam int F(u) - int G(u)
    J^T(u)   = 1/2 ||u||^2 + h_T(u) I_eps(u) - lam int F(u) - int G(u)

where ``G`` is ``|u|^6 / 6`` (or the capped supercritical primitive).  On the
grid ``I_eps(u) = -1/2 min_phi E(phi)``, so ``dI_eps/du_i = w_i phi_i u_i``
exactly and the discrete gradients below are the exact derivatives of the
discrete functionals.
"""
from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .exceptions import BracketError, ConfigError, MaxIterExceeded
from .grid import (RadialGrid, build_uniform, check_field, inner_h1, norm_h1,
                   radial_derivative, solve_helmholtz)
from .model import ModelParams, F_eval, f_eval, h_T, h_T_factor, power_part
from .phi import PhiSolution, solve_phi


@dataclass
class EnergyBreakdown:
    h1_half: float
    i_eps: float
    i_eps_d2: float
    i_eps_d4: float
    f_term: float
    crit_term: float
    total: float
    h_t: float = 1.0


class PhiCache:
    """Small LRU cache of potentials keyed by the bytes of ``u`` and ``eps``."""

    def __init__(self, maxsize: int = 64):
        self.maxsize = maxsize
        self._store: OrderedDict = OrderedDict()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(u: np.ndarray, eps: float, tol: float):
        digest = hashlib.blake2b(np.ascontiguousarray(u).tobytes(), digest_size=16).digest()
        return digest, float(eps), float(tol)

    def get(self, key):
        sol = self._store.get(key)
        if sol is not None:
            self._store.move_to_end(key)
            self.hits += 1
        else:
            self.misses += 1
        return sol

    def put(self, key, sol):
        self._store[key] = sol
        self._store.move_to_end(key)
        while len(self._store) > self.maxsize:
            self._store.popitem(last=False)

    def clear(self):
        self._store.clear()


class EnergyFunctional:
    """J and J^T on a fixed grid with fixed parameters.

    Each instance owns its potential cache, so instances must not be shared
    between threads; build one per task instead.
    """

    def __init__(self, grid: RadialGrid, params: ModelParams, phi_tol: float = 1e-10,
                 cache: PhiCache | None = None):
        self.grid = grid
        self.params = params
        self.phi_tol = phi_tol
        self.cache = cache if cache is not None else PhiCache()
        self._r = grid.nodes

    # -- pieces ------------------------------------------------------------

    def field(self, u) -> np.ndarray:
        u = check_field(self.grid, u, "u")
        if u[-1] != 0.0:
            u = u.copy()
            u[-1] = 0.0
        return u

    def phi(self, u) -> PhiSolution:
        """Potential of ``u^2``; cached by content."""
        u = self.field(u)
        key = PhiCache.key(u, self.params.eps, self.phi_tol)
        sol = self.cache.get(key)
        if sol is None:
            sol = solve_phi(self.grid, u * u, self.params.eps, tol=self.phi_tol)
            if not sol.converged:
                raise MaxIterExceeded(
                    f"phi solve did not converge (residual {sol.residual:.3e})", sol)
            self.cache.put(key, sol)
        return sol

    def I_eps(self, u) -> float:
        return self.phi(u).i_eps

    def _nonlinear(self, u):
        m = self.params
        w = self.grid.vol_weights
        F = F_eval(m, self._r, u)
        _, G = power_part(m, u)
        return m.lam * float(np.dot(w, F)), float(np.dot(w, G))

    def _nonlinear_density(self, u):
        m = self.params
        g, _ = power_part(m, u)
        return m.lam * f_eval(m, self._r, u) + g

    # -- values ------------------------------------------------------------

    def _breakdown(self, u, ht):
        u = self.field(u)
        nsq = inner_h1(self.grid, u, u)
        f_term, crit_term = self._nonlinear(u)
        if ht > 0.0:
            sol = self.phi(u)
            d2 = 0.25 * sol.dirichlet2
            d4 = 0.375 * self.params.eps**4 * sol.dirichlet4
        else:
            d2 = d4 = 0.0
        i_eps = d2 + d4
        total = 0.5 * nsq + ht * i_eps - f_term - crit_term
        return EnergyBreakdown(0.5 * nsq, i_eps, d2, d4, f_term, crit_term, total, ht)

    def J(self, u) -> EnergyBreakdown:
        return self._breakdown(u, 1.0)

    def J_trunc(self, u) -> EnergyBreakdown:
        """Truncated functional; skips the potential solve where ``h_T = 0``.

        When ``h_T = 0`` the reported ``i_eps`` is 0 because it was never computed.
        """
        u = self.field(u)
        return self._breakdown(u, h_T(self.params, inner_h1(self.grid, u, u)))

    def value(self, u, truncated: bool = True) -> float:
        return (self.J_trunc(u) if truncated else self.J(u)).total

    # -- derivatives -------------------------------------------------------

    def _split(self, u, truncated):
        """Scalar factor on <u, .> and the L^2 density of the derivative."""
        u = self.field(u)
        m = self.params
        if truncated:
            nsq = inner_h1(self.grid, u, u)
            ht = h_T(m, nsq)
            hfac = h_T_factor(m, nsq)
        else:
            ht, hfac = 1.0, 0.0
        density = -self._nonlinear_density(u)
        scale = 1.0
        if ht > 0.0 or hfac != 0.0:
            sol = self.phi(u)
            if ht > 0.0:
                density = density + ht * sol.phi * u
            if hfac != 0.0:
                scale += hfac * sol.i_eps
        return u, scale, density

    def derivative(self, u, v, truncated: bool = True) -> float:
        """``J'(u)[v]`` (or the truncated version) without a Helmholtz solve."""
        u, scale, density = self._split(u, truncated)
        v = self.field(v)
        return scale * inner_h1(self.grid, u, v) + float(
            np.dot(self.grid.vol_weights, density * v))

    def gradient(self, u, truncated: bool = True) -> np.ndarray:
        """H^1 Riesz representative of the derivative."""
        u, scale, density = self._split(u, truncated)
        return scale * u + solve_helmholtz(self.grid, density)

    def grad_J(self, u):
        return self.gradient(u, truncated=False)

    def grad_J_trunc(self, u):
        return self.gradient(u, truncated=True)

    def grad_norm(self, u, truncated: bool = True) -> float:
        return norm_h1(self.grid, self.gradient(u, truncated))

    # -- diagnostics -------------------------------------------------------

    def theta_decomposition(self, u) -> float:
        """Right-hand side of ``J(u) = J(u) - J'(u)[u] / theta`` expanded termwise.

        Equals ``J(u)`` at any critical point of the untruncated functional.
        """
        u = self.field(u)
        m = self.params
        th = m.theta
        w = self.grid.vol_weights
        sol = self.phi(u)
        nsq = inner_h1(self.grid, u, u)
        f = f_eval(m, self._r, u)
        F = F_eval(m, self._r, u)
        g, G = power_part(m, u)
        return ((th - 2) / (2 * th) * nsq
                + (th - 4) / (4 * th) * sol.dirichlet2
                + (3 * th - 8) / (8 * th) * m.eps**4 * sol.dirichlet4
                + m.lam * float(np.dot(w, f * u / th - F))
                + float(np.dot(w, g * u / th - G)))


# --- functional API with explicit grid and parameters ----------------------

def I_eps(g: RadialGrid, u, m: ModelParams) -> float:
    return EnergyFunctional(g, m).I_eps(u)


def J(g: RadialGrid, u, m: ModelParams) -> EnergyBreakdown:
    return EnergyFunctional(g, m).J(u)


def J_trunc(g: RadialGrid, u, m: ModelParams) -> EnergyBreakdown:
    return EnergyFunctional(g, m).J_trunc(u)


def grad_J(g: RadialGrid, u, m: ModelParams) -> np.ndarray:
    return EnergyFunctional(g, m).grad_J(u)


def grad_J_trunc(g: RadialGrid, u, m: ModelParams) -> np.ndarray:
    return EnergyFunctional(g, m).grad_J_trunc(u)


def default_profile(g: RadialGrid) -> np.ndarray:
    """Gaussian bump ``exp(-r^2/2)`` normalized to unit H^1 norm."""
    v = g.sample(lambda r: np.exp(-0.5 * r * r))
    return v / norm_h1(g, v)


def find_t_max(g: RadialGrid, v, m: ModelParams, functional: EnergyFunctional | None = None,
               t_range=(1e-4, 1e4), samples: int = 160, rtol: float = 1e-6):
    """Global maximizer of ``t -> J^T(t v)`` over ``t > 0``.

    A log-spaced scan locates the best sample, then golden-section search
    refines it inside the neighbouring samples.

    Returns
    -------
    (t_star, value)
    """
    fn = functional or EnergyFunctional(g, m)
    v = fn.field(v)
    if not np.any(v):
        raise ValueError("direction must be nonzero")
    ts = np.logspace(np.log10(t_range[0]), np.log10(t_range[1]), samples)
    vals = np.array([fn.value(t * v) for t in ts])
    k = int(np.argmax(vals))
    if k == 0 or k == samples - 1 or not vals[k] > 0:
        raise BracketError(f"fiber maximum not bracketed (index {k}, value {vals[k]:.3e})")
    res = minimize_scalar(lambda t: -fn.value(t * v), bracket=(ts[k - 1], ts[k], ts[k + 1]),
                          method="golden", tol=rtol)
    t_star = float(res.x)
    best = -float(res.fun)
    if best < vals[k]:
        t_star, best = float(ts[k]), float(vals[k])
    return t_star, best


def pure_power_bound(g: RadialGrid, u, m: ModelParams) -> float:
    """``1/2 ||u||^2 - int G(u)``: an upper bound for J^T where ``h_T(u) = 0``.

    It ignores the lam-dependent term (nonnegative), so a negative value
    certifies ``J^T(u) < 0`` for every lam and eps.
    """
    u = check_field(g, u, "u")
    _, G = power_part(m, u)
    return 0.5 * inner_h1(g, u, u) - float(np.dot(g.vol_weights, G))


def find_e_T(g: RadialGrid, m: ModelParams, profile=None, max_doublings: int = 60) -> np.ndarray:
    """Endpoint ``e_T = t v0`` with ``J^T(e_T) < 0`` for every lam and eps.

    The scan starts at ``t = 2 sqrt(2) T`` so that ``h_T(e_T) = 0``.
    """
    v0 = default_profile(g) if profile is None else check_field(g, profile, "profile")
    t = 2.0 * np.sqrt(2.0) * m.T
    for _ in range(max_doublings + 1):
        e = t * v0
        if pure_power_bound(g, e, m) < 0.0:
            return e
        t *= 2.0
    raise BracketError(f"no negative-energy endpoint after {max_doublings} doublings")


def bubble(r, scale: float = 1.0):
    """Aubin-Talenti profile ``(1 + (r/scale)^2)^(-1/2)``."""
    return 1.0 / np.sqrt(1.0 + (np.asarray(r) / scale) ** 2)


def sobolev_constant(g: RadialGrid | None = None, scale: float | None = None) -> float:
    """Rayleigh quotient ``int |grad U|^2 / (int U^6)^(1/3)`` of the bubble on the grid.

    The quotient is scale invariant, so the bubble is concentrated to width
    ``R/400`` (never below 8 cells) to make the gradient tail cut at R negligible.
    """
    g = g or build_uniform(40.0, 4000)
    scale = scale or max(g.R / 400.0, 8.0 * g.dr)
    U = bubble(g.nodes, scale)
    d = radial_derivative(g, U)
    num = float(np.dot(g.half_weights, d * d))
    den = float(np.dot(g.vol_weights, U**6))
    return num / den ** (1.0 / 3.0)


SOBOLEV_EXACT = 3.0 * (np.pi / 2.0) ** (4.0 / 3.0)


@dataclass
class ThresholdReport:
    S: float
    sobolev_bound: float
    truncation_bound: float

    def admits(self, level: float) -> bool:
        return level < self.sobolev_bound and level < self.truncation_bound


def thresholds(m: ModelParams, g: RadialGrid | None = None) -> ThresholdReport:
    """Level bounds ``(6-theta)/(6 theta) S^(3/2)`` and ``(theta-2)/(2 theta) T^2``."""
    if not 4.0 < m.theta < 6.0:
        raise ConfigError(f"theta must lie in (4, 6), got {m.theta}")
    S = sobolev_constant(g)
    crit = m.crit
    return ThresholdReport(
        S=S,
        sobolev_bound=(crit - m.theta) / (crit * m.theta) * S**1.5,
        truncation_bound=(m.theta - 2.0) / (2.0 * m.theta) * m.T**2,
    )
