"""Numerical lab for a quasilinear Schrodinger-Poisson system on radial grids."""
from .energy import (EnergyFunctional, I_eps, J, J_trunc, find_e_T, find_t_max, grad_J,
                     grad_J_trunc, sobolev_constant, thresholds)
from .exceptions import (BracketError, ConfigError, GridMismatchError, MaxIterExceeded,
                         NonConvergence, NonFiniteEncountered, QSPError, StepCollapse,
                         ThresholdViolation)
from .grid import RadialGrid, build_uniform, inner_h1, norm_h1, norm_lp, volume_integral
from .model import ModelParams, PowerTerm, validate
from .mountain_pass import CriticalPoint, MPAOptions, PathState, init_path, mpa_step, run
from .phi import PhiSolution, check_identity, green_potential, solve_phi

__version__ = "0.1.0"
