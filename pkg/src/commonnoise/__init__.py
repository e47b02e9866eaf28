"""Rank-based particle systems with common noise and their stochastic limit."""
from .coefficients import CoefficientSpec, GammaSpec, InitialLaw, RankFunction, lipschitz_probe
from .config import RunConfig, parse_config
from .exceptions import (CflError, CommonNoiseError, ConfigError, ContractViolation, DomainError,
                         GridMismatchError, LipschitzViolation, NonConvergenceError, NumericalBlowupError,
                         SpecError, TruncationOverflowError)
from .harness import ConvergenceReport, coupled_gap, rate_fit, run_convergence
from .limit import CommonNoiseLimit, FixedPointConfig, LimitPath, fixed_point_solve, spde_weak_residual
from .measures import EmpiricalMeasure, GridCdf, w1_from_cdfs, wasserstein
from .particles import SimConfig, TrajectoryRecord, simulate
from .pme import PmeGrid, PmeSolution, PorousMediumSolver, solve_pme

__version__ = "0.1.0"
