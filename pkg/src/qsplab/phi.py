"""Convex solver for the quasilinear Poisson problem ``-Lap phi - eps^4 Lap_4 phi = rho``.

The discrete problem is the minimization of

    E(phi) = 1/2 sum_h W_h d_h^2 + eps^4/4 sum_h W_h d_h^4 - sum_i w_i rho_i phi_i

over nodal values with ``phi(R) = 0``, where ``d_h`` are half-node differences
and ``W_h`` the flux weights.  E is strictly convex, so damped Newton with an
Armijo line search converges from any start.  Stationarity tested against
``phi`` itself gives the discrete energy identity

    sum W d^2 + eps^4 sum W d^4 = sum w rho phi

exactly, which :func:`check_identity` measures.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import solveh_banded

from .exceptions import MaxIterExceeded, NonFiniteEncountered
from .grid import RadialGrid, check_field, stiffness_bands

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4
MAX_HALVINGS = 40
ROUNDOFF = 1e-12


@dataclass
class PhiSolution:
    phi: np.ndarray
    iterations: int
    residual: float
    dirichlet2: float
    dirichlet4: float
    coupling: float
    eps: float
    converged: bool = True

    @property
    def x_norm(self) -> float:
        return self.dirichlet2**0.5 + self.dirichlet4**0.25

    @property
    def min_value(self) -> float:
        return float(self.phi.min())

    @property
    def max_abs(self) -> float:
        return float(np.abs(self.phi).max())

    @property
    def i_eps(self) -> float:
        """``1/4 int |grad phi|^2 + 3 eps^4/8 int |grad phi|^4``."""
        return 0.25 * self.dirichlet2 + 0.375 * self.eps**4 * self.dirichlet4


def phi_energy(g: RadialGrid, phi, rho, eps: float) -> float:
    """Discrete convex energy minimized by :func:`solve_phi`."""
    phi = check_field(g, phi, "phi")
    rho = check_field(g, rho, "rho")
    d = np.diff(phi) / g.dr
    d2 = d * d
    quad = np.dot(g.half_weights, 0.5 * d2 + 0.25 * eps**4 * d2 * d2)
    return float(quad - np.dot(g.vol_weights, rho * phi))


def phi_energy_gradient(g: RadialGrid, phi, rho, eps: float) -> np.ndarray:
    """Gradient of :func:`phi_energy` with respect to the nodal values."""
    phi = check_field(g, phi, "phi")
    rho = check_field(g, rho, "rho")
    d = np.diff(phi) / g.dr
    flux = g.half_weights * (d + eps**4 * d**3) / g.dr
    out = -g.vol_weights * rho
    out[:-1] -= flux
    out[1:] += flux
    return out


def _residual(g, grad):
    # strong-form residual: weak gradient divided by the node volumes
    return float(np.max(np.abs(grad[:-1]) / g.vol_weights[:-1]))


def _finish(g, phi, rho, eps, iterations, residual, converged):
    d = np.diff(phi) / g.dr
    d2 = d * d
    return PhiSolution(
        phi=phi,
        iterations=iterations,
        residual=residual,
        dirichlet2=float(np.dot(g.half_weights, d2)),
        dirichlet4=float(np.dot(g.half_weights, d2 * d2)),
        coupling=float(np.dot(g.vol_weights, rho * phi)),
        eps=eps,
        converged=converged,
    )


def _linear_potential(g, rho):
    ab = stiffness_bands(g)
    w = solveh_banded(ab, g.vol_weights[:-1] * rho[:-1])
    return np.append(w, 0.0)


def solve_phi(g: RadialGrid, rho, eps: float, tol: float = 1e-10, max_iter: int = 100,
              phi0=None, raise_on_failure: bool = False) -> PhiSolution:
    """Minimize :func:`phi_energy` by damped Newton.

    Parameters
    ----------
    rho : array_like
        Source density on ``g``; any sign is accepted.
    eps : float
        Quasilinearity parameter; ``eps = 0`` is the linear Poisson problem.
    tol : float
        Target for the sup-norm of the strong-form residual.
    phi0 : array_like, optional
        Starting iterate.  Defaults to the ``eps = 0`` potential.
    raise_on_failure : bool
        Raise :class:`MaxIterExceeded` instead of returning a flagged result.

    Returns
    -------
    PhiSolution
        ``converged`` is False when the iteration budget ran out.
    """
    rho = check_field(g, rho, "rho")
    if not np.all(np.isfinite(rho)):
        raise NonFiniteEncountered("source contains non-finite values")
    e4 = float(eps) ** 4
    if not np.any(rho):
        phi = np.zeros(g.size)
        return _finish(g, phi, rho, eps, 0, 0.0, True)

    if phi0 is None:
        phi = _linear_potential(g, rho)
    else:
        phi = check_field(g, phi0, "phi0").copy()
        phi[-1] = 0.0

    energy = phi_energy(g, phi, rho, eps)
    residual = np.inf
    for it in range(max_iter + 1):
        grad = phi_energy_gradient(g, phi, rho, eps)
        residual = _residual(g, grad)
        if not np.isfinite(residual):
            raise NonFiniteEncountered(f"non-finite residual at iteration {it}")
        if residual <= tol:
            return _finish(g, phi, rho, eps, it, residual, True)
        if it == max_iter:
            break
        d = np.diff(phi) / g.dr
        ab = stiffness_bands(g, 1.0 + 3.0 * e4 * d * d)
        step = np.append(solveh_banded(ab, -grad[:-1], check_finite=False), 0.0)
        slope = float(np.dot(grad, step))
        if not slope < 0:
            step = -grad / g.vol_weights.max()
            step[-1] = 0.0
            slope = float(np.dot(grad, step))
        scale = abs(energy) + float(np.dot(g.vol_weights, np.abs(rho * phi)))
        if -slope <= ROUNDOFF * scale:
            # predicted decrease is below the energy's rounding error, so the
            # line search is blind; the full Newton step must shrink the residual
            trial = phi + step
            if _residual(g, phi_energy_gradient(g, trial, rho, eps)) >= residual:
                log.debug("phi solve stalled at residual %.3e", residual)
                break
            e_trial = phi_energy(g, trial, rho, eps)
        else:
            t = 1.0
            for _ in range(MAX_HALVINGS):
                trial = phi + t * step
                e_trial = phi_energy(g, trial, rho, eps)
                if e_trial <= energy + ARMIJO_C * t * slope:
                    break
                t *= 0.5
            else:
                log.debug("line search exhausted at residual %.3e", residual)
                break
        phi = trial
        energy = e_trial

    sol = _finish(g, phi, rho, eps, it, residual, False)
    if raise_on_failure:
        raise MaxIterExceeded(
            f"phi solve stopped at residual {residual:.3e} > tol {tol:.1e}", sol)
    return sol


def green_potential(g: RadialGrid, rho) -> np.ndarray:
    """Newtonian potential of a radial density, shifted to vanish at R.

    ``phi(r) = (1/r) int_0^r s^2 rho ds + int_r^R s rho ds - phi(R)`` with
    cumulative trapezoid sums; this is independent of the finite-volume solver.
    """
    rho = check_field(g, rho, "rho")
    r = g.nodes
    inner = cumulative_trapezoid(r**2 * rho, r, initial=0.0)
    outer_cum = cumulative_trapezoid(r * rho, r, initial=0.0)
    outer = outer_cum[-1] - outer_cum
    phi = np.empty_like(r)
    phi[1:] = inner[1:] / r[1:] + outer[1:]
    phi[0] = outer[0]
    return phi - inner[-1] / r[-1]


def check_identity(sol: PhiSolution, eps: float | None = None) -> float:
    """Relative defect of ``D2 + eps^4 D4 = int phi rho``."""
    eps = sol.eps if eps is None else eps
    lhs = sol.dirichlet2 + eps**4 * sol.dirichlet4
    if not sol.converged:
        log.warning("identity checked on a non-converged solution (residual %.3e)",
                    sol.residual)
    return abs(lhs - sol.coupling) / max(1.0, abs(sol.coupling))
