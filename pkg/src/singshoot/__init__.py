"""Extended shooting for control-affine optimal control problems with singular arcs."""

from .benchmarks import BenchmarkCase, fishing, get_case, goddard, regulator
from .errors import (ConfigurationError, Diverged, IntegrationDiverged, JacobianRankDeficient,
                     JacobianSingular, LegendreClebschViolation, NotSquare, ShootingError)
from .integrate import ControlStructure, TrajectoryRecord, integrate_arcs
from .problem import ProblemDef, VectorField
from .shooting import (ResidualMap, assemble_classical, assemble_extended,
                       assemble_full_unconstrained, residual_map_for_case)
from .solver import SolverSettings, gauss_newton, newton, solve

__version__ = "0.1.0"
