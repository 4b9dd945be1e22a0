"""Uniform radial mesh on [0, R] for radially symmetric functions on R^3.

Fields are plain 1-D float arrays of length ``N + 1`` sampled at the nodes
``r_i = i * dr``.  The value at ``r_N = R`` stands for the decay at infinity and
is treated as zero by every H^1 operation (homogeneous Dirichlet truncation).

The discretization is finite-volume: node ``i`` owns the shell
``[r_{i-1/2}, r_{i+1/2}]`` (clipped to ``[0, R]``), so the volume weights sum
to the ball volume exactly, and gradients live on the half nodes
``r_{i+1/2}`` with flux weights ``4 pi r_{i+1/2}^2 dr``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solveh_banded

from .exceptions import GridMismatchError, NonFiniteEncountered

MIN_NODES = 16


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Immutable uniform radial grid.

    Attributes
    ----------
    R : float
        Domain radius.
    N : int
        Number of cells; there are ``N + 1`` nodes.
    dr : float
        Mesh spacing ``R / N``.
    nodes : ndarray, shape (N + 1,)
    vol_weights : ndarray, shape (N + 1,)
        Shell volumes; ``sum(vol_weights) == 4/3 pi R^3``.
    half_nodes : ndarray, shape (N,)
    half_weights : ndarray, shape (N,)
        ``4 pi r_{i+1/2}^2 dr``, the flux quadrature weights.
    """

    R: float
    N: int
    dr: float = field(init=False)
    nodes: np.ndarray = field(init=False, repr=False)
    vol_weights: np.ndarray = field(init=False, repr=False)
    half_nodes: np.ndarray = field(init=False, repr=False)
    half_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        R = float(self.R)
        N = int(self.N)
        dr = R / N
        nodes = np.arange(N + 1) * dr
        nodes[-1] = R
        edges = np.concatenate(([0.0], (np.arange(N) + 0.5) * dr, [R]))
        vol = (4.0 * np.pi / 3.0) * np.diff(edges**3)
        half = (np.arange(N) + 0.5) * dr
        hw = 4.0 * np.pi * half**2 * dr
        for name, value in (("R", R), ("N", N), ("dr", dr), ("nodes", nodes),
                            ("vol_weights", vol), ("half_nodes", half),
                            ("half_weights", hw)):
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def size(self) -> int:
        return self.N + 1

    def sample(self, func) -> np.ndarray:
        """Evaluate ``func(r)`` at the nodes and zero the boundary value."""
        values = np.array(func(self.nodes), dtype=float)
        values = np.broadcast_to(values, (self.size,)).copy()
        values[-1] = 0.0
        return values


def build_uniform(R: float, N: int) -> RadialGrid:
    """Build a uniform grid with ``N`` cells on ``[0, R]``."""
    if not np.isfinite(R) or R <= 0:
        raise ValueError(f"radius must be finite and positive, got {R!r}")
    if int(N) != N or N < MIN_NODES:
        raise ValueError(f"need an integer N >= {MIN_NODES}, got {N!r}")
    return RadialGrid(float(R), int(N))


def check_field(g: RadialGrid, h, name: str = "field") -> np.ndarray:
    """Return ``h`` as a float array, raising if it does not fit on ``g``."""
    arr = np.asarray(h, dtype=float)
    if arr.shape != (g.size,):
        raise GridMismatchError(
            f"{name} has shape {arr.shape}, grid expects ({g.size},)")
    return arr


def dirichlet(g: RadialGrid, h) -> np.ndarray:
    """Copy of ``h`` with the boundary node set to zero."""
    out = check_field(g, h).copy()
    out[-1] = 0.0
    return out


def volume_integral(g: RadialGrid, h) -> float:
    """Quadrature of ``h`` over the ball of radius R."""
    return float(np.dot(g.vol_weights, check_field(g, h)))


def radial_derivative(g: RadialGrid, h) -> np.ndarray:
    """One-sided differences located at the half nodes."""
    return np.diff(check_field(g, h)) / g.dr


def norm_lp(g: RadialGrid, h, p: float) -> float:
    h = check_field(g, h)
    if p < 1:
        raise ValueError(f"exponent must be >= 1, got {p}")
    if np.isinf(p):
        return float(np.max(np.abs(h)))
    return float(np.dot(g.vol_weights, np.abs(h) ** p)) ** (1.0 / p)


def seminorm_grad_lp(g: RadialGrid, h, p: float) -> float:
    d = radial_derivative(g, h)
    if p < 1:
        raise ValueError(f"exponent must be >= 1, got {p}")
    if np.isinf(p):
        return float(np.max(np.abs(d)))
    return float(np.dot(g.half_weights, np.abs(d) ** p)) ** (1.0 / p)


def inner_h1(g: RadialGrid, a, b) -> float:
    """Discrete H^1 inner product: flux quadrature plus lumped mass."""
    a = check_field(g, a)
    b = check_field(g, b)
    da = np.diff(a) / g.dr
    db = np.diff(b) / g.dr
    return float(np.dot(g.half_weights, da * db) + np.dot(g.vol_weights, a * b))


def norm_h1(g: RadialGrid, h) -> float:
    return float(np.sqrt(max(inner_h1(g, h, h), 0.0)))


def x_norm(g: RadialGrid, phi) -> float:
    """|grad phi|_2 + |grad phi|_4."""
    return seminorm_grad_lp(g, phi, 2) + seminorm_grad_lp(g, phi, 4)


def stiffness_bands(g: RadialGrid, coeff=None) -> np.ndarray:
    """Upper banded form (for ``solveh_banded``) of the weighted stiffness matrix.

    The matrix acts on the interior unknowns ``0..N-1``; ``coeff`` multiplies
    each half-node flux weight (defaults to one).
    """
    c = g.half_weights / g.dr**2
    if coeff is not None:
        c = c * coeff
    ab = np.zeros((2, g.N))
    ab[1, :] = c
    ab[1, 1:] += c[:-1]
    ab[0, 1:] = -c[:-1]
    return ab


def apply_stiffness(g: RadialGrid, h, coeff=None) -> np.ndarray:
    """Weak-form stiffness applied to ``h``: row i is dE/dh_i of the flux energy."""
    h = check_field(g, h)
    flux = g.half_weights * np.diff(h) / g.dr**2
    if coeff is not None:
        flux = flux * coeff
    out = np.zeros(g.size)
    out[:-1] -= flux
    out[1:] += flux
    return out


def solve_helmholtz(g: RadialGrid, s) -> np.ndarray:
    """Solve ``-Lap w + w = s`` weakly with ``w'(0) = 0`` and ``w(R) = 0``.

    The returned ``w`` satisfies ``inner_h1(w, v) == volume_integral(s * v)`` for
    every ``v`` vanishing at R.  The system is tridiagonal SPD.
    """
    s = check_field(g, s, "source")
    ab = stiffness_bands(g)
    ab[1, :] += g.vol_weights[:-1]
    rhs = g.vol_weights[:-1] * s[:-1]
    try:
        w = solveh_banded(ab, rhs, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NonFiniteEncountered(f"Helmholtz solve failed: {exc}") from exc
    return np.append(w, 0.0)
