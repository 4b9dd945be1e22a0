"""Numerical mountain pass for the truncated functional J^T.

Two stages share one iteration budget:

1. Path deformation.  The discrete path ``0 = gamma_0, ..., gamma_M = e_T``
   starts as the segment ``k/M * e_T``.  Each step moves the highest interior
   node along ``-grad J^T`` with Armijo backtracking and then re-centres its
   two neighbours in H^1 arclength.  The path maximum never increases.
2. Ray refinement.  The path resolution caps how small the gradient at the
   highest node can get, so the best node is handed to a local minimax
   iteration: maximize ``J^T`` along the ray through ``u``, then take an Armijo
   step along the tangential part of the gradient.  This converges linearly to
   the same saddle and reaches tight gradient tolerances.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .energy import EnergyFunctional, ThresholdReport, find_e_T, thresholds
from .exceptions import BracketError, NonConvergence, ThresholdViolation
from .grid import RadialGrid, inner_h1, norm_h1
from .model import ModelParams
from .phi import PhiSolution

log = logging.getLogger(__name__)


@dataclass
class MPAOptions:
    n_path: int = 31
    tol: float = 1e-6
    max_iter: int = 5000
    path_iter: int = 300
    switch_tol: float = 2e-2
    armijo_c: float = 1e-4
    max_halvings: int = 40
    max_move: float = 0.5
    refine: bool = True
    max_restarts: int = 3
    clip_rtol: float = 1e-6


@dataclass
class PathState:
    nodes: list
    values: np.ndarray
    step: float = 1.0
    iteration: int = 0
    grad_norm: float = np.inf
    normal_grad_norm: float = np.inf
    stalled: bool = False

    @property
    def max_index(self) -> int:
        return int(np.argmax(self.values[1:-1])) + 1

    @property
    def level_estimate(self) -> float:
        return float(self.values[self.max_index])


@dataclass
class CriticalPoint:
    u: np.ndarray
    level: float
    grad_norm: float
    h1_norm: float
    min_u: float
    phi: PhiSolution | None
    converged: bool
    iterations: int
    T: float = np.nan
    untruncated_grad_norm: float = np.nan
    thresholds: ThresholdReport | None = None
    level_history: list = field(default_factory=list, repr=False)
    grad_history: list = field(default_factory=list, repr=False)
    seconds: float = 0.0

    @property
    def promoted(self) -> bool:
        """True when ``||u|| <= T``, so ``u`` is critical for the untruncated J."""
        return self.h1_norm <= self.T

    @property
    def max_u(self) -> float:
        return float(self.u.max())

    @property
    def below_thresholds(self) -> bool:
        return self.thresholds is not None and self.thresholds.admits(self.level)


def init_path(g: RadialGrid, m: ModelParams, n_path: int = 31,
              functional: EnergyFunctional | None = None, e_T=None) -> PathState:
    """Segment path ``t -> t e_T`` sampled at ``n_path + 1`` equispaced nodes."""
    if n_path < 2:
        raise ValueError("a path needs at least two segments")
    fn = functional or EnergyFunctional(g, m)
    e = find_e_T(g, m) if e_T is None else fn.field(e_T)
    nodes = [(k / n_path) * e for k in range(n_path + 1)]
    nodes[0] = np.zeros(g.size)
    values = np.array([fn.value(x) for x in nodes])
    return PathState(nodes=nodes, values=values)


def _arclength_midpoint(g, a, b, c):
    """Point at half the H^1 arclength of the polyline a -> b -> c."""
    l1 = norm_h1(g, b - a)
    l2 = norm_h1(g, c - b)
    half = 0.5 * (l1 + l2)
    if l1 + l2 == 0.0:
        return b.copy()
    if half <= l1:
        return a + (half / l1) * (b - a)
    return b + ((half - l1) / l2) * (c - b)


def mpa_step(state: PathState, g: RadialGrid, m: ModelParams, opts: MPAOptions | None = None,
             functional: EnergyFunctional | None = None) -> PathState:
    """Move the highest node downhill; return a new state.

    Endpoints are never touched and the new level never exceeds the old one by
    more than 1e-12.  If backtracking is exhausted the returned state is
    unchanged apart from ``stalled = True``.
    """
    opts = opts or MPAOptions()
    fn = functional or EnergyFunctional(g, m)
    nodes = list(state.nodes)
    values = state.values.copy()
    k = state.max_index
    old_level = values[k]
    u = nodes[k]
    grad = fn.gradient(u)
    full_norm = norm_h1(g, grad)
    # drop the component along the path: sliding along it only moves the node
    # off the ridge and leaves the crossing unresolved
    tangent = nodes[k + 1] - nodes[k - 1]
    tangent = tangent / norm_h1(g, tangent)
    direction = grad - inner_h1(g, grad, tangent) * tangent
    gn2 = inner_h1(g, direction, direction)
    # a node may move at most a fraction of the distance to its nearest neighbour
    spacing = min(norm_h1(g, u - nodes[k - 1]), norm_h1(g, nodes[k + 1] - u))
    s = min(state.step, opts.max_move * spacing / max(np.sqrt(gn2), 1e-300))
    for _ in range(opts.max_halvings):
        trial = u - s * direction
        val = fn.value(trial)
        if val <= old_level - opts.armijo_c * s * gn2:
            break
        s *= 0.5
    else:
        return replace(state, grad_norm=full_norm, normal_grad_norm=float(np.sqrt(gn2)),
                       stalled=True, iteration=state.iteration + 1)
    nodes[k] = trial
    values[k] = val

    moved = {}
    for j in (k - 1, k + 1):
        if 1 <= j <= len(nodes) - 2:
            x = _arclength_midpoint(g, nodes[j - 1], nodes[j], nodes[j + 1])
            moved[j] = (x, fn.value(x))
    if moved:
        trial_values = values.copy()
        for j, (_, v) in moved.items():
            trial_values[j] = v
        if trial_values[1:-1].max() <= old_level + 1e-12:
            for j, (x, v) in moved.items():
                nodes[j] = x
            values = trial_values
    return PathState(nodes=nodes, values=values, step=min(2.0 * s, 1.0),
                     iteration=state.iteration + 1, grad_norm=full_norm,
                     normal_grad_norm=float(np.sqrt(gn2)))


def _fiber_max(fn: EnergyFunctional, v, t0: float):
    """Root of ``t -> J^T'(t v)[v]`` near ``t0``; ``v`` has unit H^1 norm."""
    def slope(t):
        return fn.derivative(t * v, v)

    a, b = 0.8 * t0, 1.25 * t0
    for _ in range(60):
        if slope(a) > 0:
            break
        a *= 0.8
    else:
        raise BracketError("fiber derivative never positive")
    for _ in range(60):
        if slope(b) < 0:
            break
        b *= 1.25
    else:
        raise BracketError("fiber derivative never negative")
    return brentq(slope, a, b, xtol=1e-15, rtol=1e-15, maxiter=200)


def _refine(fn: EnergyFunctional, u0, opts: MPAOptions, budget: int, history, ghist):
    """Local minimax on rays; returns ``(u, grad_norm, iterations, converged)``."""
    g = fn.grid
    t = norm_h1(g, u0)
    v = u0 / t
    t = _fiber_max(fn, v, t)
    u = t * v
    val = fn.value(u)
    sigma = 1.0
    gn = np.inf
    for it in range(budget):
        grad = fn.gradient(u)
        gn = norm_h1(g, grad)
        history.append(val)
        ghist.append(gn)
        if gn <= opts.tol * max(1.0, t):
            return u, gn, it, True
        gt = grad - inner_h1(g, grad, v) * v
        gt2 = inner_h1(g, gt, gt)
        accepted = False
        for _ in range(opts.max_halvings):
            w = v - (sigma / t) * gt
            w /= norm_h1(g, w)
            try:
                t_new = _fiber_max(fn, w, t)
            except BracketError:
                sigma *= 0.5
                continue
            u_new = t_new * w
            val_new = fn.value(u_new)
            blind = opts.armijo_c * sigma * gt2 < 1e-13 * max(1.0, abs(val))
            if val_new <= val - opts.armijo_c * sigma * gt2 or (
                    blind and fn.grad_norm(u_new) < gn):
                accepted = True
                break
            sigma *= 0.5
        if not accepted:
            log.debug("ray refinement stalled at grad %.3e", gn)
            return u, gn, it, False
        v, t, u, val = w, t_new, u_new, val_new
        sigma = min(2.0 * sigma, 4.0)
    return u, gn, budget, False


def _clip_negative(fn, u, opts, gn):
    """Zero tiny negative undershoots if that keeps the gradient within tolerance."""
    umax = u.max()
    neg = (u < 0) & (u >= -opts.clip_rtol * umax)
    if not neg.any():
        return u, gn
    clipped = np.where(neg, 0.0, u)
    gc = fn.grad_norm(clipped)
    if gc <= opts.tol * max(1.0, norm_h1(fn.grid, clipped)):
        return clipped, gc
    return u, gn


def _run_once(g, m, opts, warm_start, fn):
    history, ghist = [], []
    iterations = 0
    if warm_start is None:
        state = init_path(g, m, opts.n_path, functional=fn)
        u_best = state.nodes[state.max_index]
        while iterations < min(opts.path_iter, opts.max_iter):
            state = mpa_step(state, g, m, opts, functional=fn)
            iterations += 1
            history.append(state.level_estimate)
            ghist.append(state.grad_norm)
            if state.stalled:
                log.debug("path deformation stalled after %d steps", iterations)
                break
            u_best = state.nodes[state.max_index]
            scale = max(1.0, norm_h1(g, u_best))
            if state.grad_norm <= opts.tol * scale:
                return u_best, state.grad_norm, iterations, True, history, ghist
            if opts.refine and state.normal_grad_norm <= opts.switch_tol * scale:
                break
        u_best = state.nodes[state.max_index]
    else:
        u_best = fn.field(warm_start)
    if not opts.refine:
        gn = fn.grad_norm(u_best)
        ok = gn <= opts.tol * max(1.0, norm_h1(g, u_best))
        return u_best, gn, iterations, ok, history, ghist
    u, gn, n, ok = _refine(fn, u_best, opts, opts.max_iter - iterations, history, ghist)
    return u, gn, iterations + n, ok, history, ghist


def run(g: RadialGrid, m: ModelParams, opts: MPAOptions | None = None, warm_start=None,
        raise_on_failure: bool = False) -> CriticalPoint:
    """Approximate a mountain-pass critical point of J^T.

    If the converged point has ``||u|| > T`` the truncation radius is doubled
    and the run restarted, at most ``opts.max_restarts`` times.

    Parameters
    ----------
    warm_start : array_like, optional
        Skip the path stage and start the ray refinement from this field
        (typically the solution at a neighbouring parameter value).

    Warns
    -----
    ThresholdViolation
        When the level is not below both admissibility bounds.
    """
    opts = opts or MPAOptions()
    m.require_valid()
    t0 = time.perf_counter()
    thr = thresholds(m)
    params = m
    for restart in range(opts.max_restarts + 1):
        fn = EnergyFunctional(g, params)
        u, gn, iters, ok, hist, ghist = _run_once(g, params, opts, warm_start, fn)
        if ok:
            u, gn = _clip_negative(fn, u, opts, gn)
        h1 = norm_h1(g, u)
        if ok and h1 > params.T and restart < opts.max_restarts:
            log.info("||u|| = %.4f exceeds T = %.4f; doubling T", h1, params.T)
            params = params.replace(T=2.0 * params.T)
            thr = thresholds(params)
            continue
        break
    level = fn.value(u)
    phi = fn.phi(u) if np.any(u) else None
    cp = CriticalPoint(
        u=u, level=level, grad_norm=gn, h1_norm=h1, min_u=float(u.min()), phi=phi,
        converged=bool(ok and level > 0), iterations=iters, T=params.T,
        untruncated_grad_norm=fn.grad_norm(u, truncated=False) if h1 <= params.T else np.nan,
        thresholds=thr, level_history=hist, grad_history=ghist,
        seconds=time.perf_counter() - t0)
    if not cp.converged:
        msg = (f"mountain pass did not converge: grad {gn:.3e}, level {level:.6g}, "
               f"{iters} iterations")
        if raise_on_failure:
            raise NonConvergence(msg, cp)
        log.warning(msg)
    elif not thr.admits(level):
        warnings.warn(
            f"level {level:.6g} is not below both thresholds "
            f"(Sobolev {thr.sobolev_bound:.6g}, truncation {thr.truncation_bound:.6g})",
            ThresholdViolation, stacklevel=2)
    return cp


__all__ = ["MPAOptions", "PathState", "CriticalPoint", "init_path", "mpa_step", "run"]
