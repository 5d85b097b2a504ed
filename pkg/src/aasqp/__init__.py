"""Anderson-accelerated SQP-type methods for small dense NLPs."""

from .anderson import AndersonConfig, AndersonState, aa1_closed_form, aa_step, broyden_reference_step
from .hessians import HessianStrategy
from .nlp_model import Nlp, PrimalDualIterate
from .qp_solver import QpData, QpSolution, solve_qp
from .sqp_engine import ConvergenceReport, SqpConfig, SqpMap, solve

__all__ = [
    "AndersonConfig",
    "AndersonState",
    "ConvergenceReport",
    "HessianStrategy",
    "Nlp",
    "PrimalDualIterate",
    "QpData",
    "QpSolution",
    "SqpConfig",
    "SqpMap",
    "aa1_closed_form",
    "aa_step",
    "broyden_reference_step",
    "solve",
    "solve_qp",
]

__version__ = "0.1.0"
